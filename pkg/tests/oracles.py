"""Brute-force reference computations shared by the tests (dense linear algebra, no closed forms)."""
import numpy as np


def chain_matrix(omegas, reflect_first: bool):
    """Dense transition matrix of the nearest-neighbour walk on sites 0..len-1 (no boundary handling)."""
    w = np.array(omegas, dtype=float)
    if reflect_first:
        w[0] = 1.0
    n = w.size
    P = np.zeros((n, n))
    for x in range(n):
        if x + 1 < n:
            P[x, x + 1] = w[x]
        if x > 0:
            P[x, x - 1] = 1.0 - w[x]
    return P


def absorption_probability(omegas, a: int, x: int, b: int) -> float:
    """P_x(hit b before a) from the fundamental matrix of the chain killed at a and b."""
    P = chain_matrix(omegas, False)
    inner = list(range(a + 1, b))
    Q = P[np.ix_(inner, inner)]
    r = P[np.ix_(inner, [b])][:, 0]
    u = np.linalg.solve(np.eye(len(inner)) - Q, r)
    return float(u[x - a - 1])


def hitting_moments(omegas, a: int, b: int):
    """(mean, variance) of tau(b) from a, site 0 reflecting, by first-step analysis."""
    P = chain_matrix(omegas, True)
    Q = P[:b, :b]
    A = np.eye(b) - Q
    m = np.linalg.solve(A, np.ones(b))
    s = np.linalg.solve(A, 1.0 + 2.0 * Q @ m)
    return float(m[a]), float(s[a] - m[a] ** 2)


def failure_moments(omegas, i0: int, e1: int):
    """(1 - p, E[F | fail], E[F^2 | fail]) for one attempt from i0, site 0 reflecting.

    An attempt fails when it returns to i0 before i0 + e1.
    """
    w = np.array(omegas, dtype=float)
    n = i0 + e1 + 1
    states = [k for k in range(n) if k not in (i0, i0 + e1)]
    idx = {k: j for j, k in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    back = np.zeros(len(states))
    for k in states:
        right = 1.0 if k == 0 else w[k]
        for nb, p in ((k + 1, right), (k - 1, 1.0 - right)):
            if p == 0 or nb < 0:
                continue
            if nb == i0:
                back[idx[k]] += p
            elif nb != i0 + e1:
                Q[idx[k], idx[nb]] += p
    A = np.eye(len(states)) - Q
    hit = np.linalg.solve(A, back)                    # P(return to i0 before i0 + e1)
    first = np.linalg.solve(A, hit)                   # E[T; return]
    second = np.linalg.solve(A, hit + 2 * Q @ first)  # E[T^2; return]
    total = [0.0, 0.0, 0.0]
    for nb, p in ((i0 - 1, 1.0 - w[i0]), (i0 + 1, w[i0])):
        j = idx[nb]
        total[0] += p * hit[j]
        total[1] += p * (hit[j] + first[j])
        total[2] += p * (hit[j] + 2 * first[j] + second[j])
    fail = total[0]
    return fail, total[1] / fail, total[2] / fail
