"""Exact computations in a fixed finite environment.

Windows carry the environment on sites L..R.  ``reflect`` treats omega_L as 1;
``open`` treats the window as a piece of an infinite environment and certifies
that the neglected part of every left-infinite sum is below ``TRUNCATION_RTOL``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateValley, TruncationUncertified
from .potential import log_rho

TRUNCATION_RTOL = 1e-13
_DRIFT_WINDOW = 64
_LOG2 = math.log(2.0)

REFLECT = "reflect"
OPEN = "open"


def _logcumsum(x: np.ndarray) -> np.ndarray:
    return np.logaddexp.accumulate(x) if x.size else x


def _rev_logcumsum(x: np.ndarray) -> np.ndarray:
    return np.logaddexp.accumulate(x[::-1])[::-1] if x.size else x


@dataclass(frozen=True)
class WindowEnvironment:
    left: int
    omegas: np.ndarray
    boundary: str = REFLECT

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        object.__setattr__(self, "omegas", w)
        if w.size < 2:
            raise ValueError("window needs at least two sites")
        if self.boundary not in (REFLECT, OPEN):
            raise ValueError("boundary must be 'reflect' or 'open'")
        inner = w[1:] if self.boundary == REFLECT else w
        if np.any((inner <= 0) | (inner >= 1)):
            raise ValueError("omegas must lie strictly inside (0,1)")
        lr = log_rho(np.clip(w, 1e-300, 1 - 1e-16))
        v = np.concatenate(([0.0], np.cumsum(lr[1:])))
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_lr", lr)

    @property
    def right(self) -> int:
        return self.left + self.omegas.size - 1

    @property
    def v(self) -> np.ndarray:
        """V on the window, normalised so that V(L) = 0."""
        return self._v

    def i(self, x: int) -> int:
        if not self.left <= x <= self.right:
            raise IndexError("site %d outside window [%d,%d]" % (x, self.left, self.right))
        return x - self.left

    def omega(self, x: int) -> float:
        return float(self.omegas[self.i(x)])

    def log_one_plus_rho(self) -> np.ndarray:
        """log(1 + rho_i) = -log omega_i, with the reflecting cell contributing log 1."""
        out = -np.log(self.omegas)
        if self.boundary == REFLECT:
            out[0] = 0.0
        return out

    def certify_left(self, log_total: float, what: str) -> None:
        """Raise unless the sum_{i<L} e^{-V(i)} remainder is negligible next to ``log_total``."""
        if self.boundary == REFLECT:
            return
        v = self.v
        n = min(_DRIFT_WINDOW, v.size - 1)
        rate = (v[n] - v[0]) / n            # log-ratio of successive terms walking left
        if rate >= 0:
            raise TruncationUncertified("%s: potential does not rise at the left edge" % what)
        log_tail = -v[0] + rate - math.log1p(-math.exp(rate))
        if log_tail - log_total > math.log(TRUNCATION_RTOL):
            raise TruncationUncertified("%s: left remainder too large" % what)

    def certify_right(self, log_total: float, what: str) -> None:
        v = self.v
        n = min(_DRIFT_WINDOW, v.size - 1)
        rate = (v[-1] - v[-1 - n]) / n
        if rate >= 0:
            raise TruncationUncertified("%s: potential does not fall at the right edge" % what)
        log_tail = v[-1] + rate - math.log1p(-math.exp(rate))
        if log_tail - log_total > math.log(TRUNCATION_RTOL):
            raise TruncationUncertified("%s: right remainder too large" % what)


# -- exit and escape --------------------------------------------------------------
def exit_probability(env: WindowEnvironment, a: int, x: int, b: int) -> float:
    """P_x(tau(b) < tau(a)) for a <= x <= b."""
    if not a <= x <= b:
        raise ValueError("need a <= x <= b")
    if x == a:
        return 0.0
    if x == b:
        return 1.0
    v = env.v
    ia, ix, ib = env.i(a), env.i(x), env.i(b)
    return float(math.exp(logsumexp(v[ia:ix]) - logsumexp(v[ia:ib])))


def exit_probability_left(env: WindowEnvironment, a: int, x: int, b: int) -> float:
    """P_x(tau(a) < tau(b)), computed from its own sum rather than as 1 - exit_probability."""
    if not a <= x <= b:
        raise ValueError("need a <= x <= b")
    if x == a:
        return 1.0
    if x == b:
        return 0.0
    v = env.v
    ia, ix, ib = env.i(a), env.i(x), env.i(b)
    return float(math.exp(logsumexp(v[ix:ib]) - logsumexp(v[ia:ib])))


def escape_probability(env: WindowEnvironment, a: int, x: int) -> float:
    """P_x(tau(a) = infinity); the right end of the window stands in for +infinity."""
    if x < a:
        raise ValueError("need x >= a")
    if x == a:
        return 0.0
    v = env.v
    ia, ix = env.i(a), env.i(x)
    log_den = float(logsumexp(v[ia:]))
    env.certify_right(log_den, "escape_probability")
    return float(math.exp(logsumexp(v[ia:ix]) - log_den))


# -- hitting-time moments ------------------------------------------------------------
def _log_step_means(env: WindowEnvironment) -> np.ndarray:
    """log m_j with m_j = E_j[tau(j+1)] = sum_{i<=j} (1+rho_i) e^{V(j)-V(i)}.

    For a reflecting window this is the unrolled recursion m_j = 1/omega_j + rho_j m_{j-1}
    started from m_L = 1.
    """
    v = env.v
    return v + _logcumsum(env.log_one_plus_rho() - v)


def log_expected_hitting_time(env: WindowEnvironment, a: int, b: int) -> float:
    if a >= b:
        raise ValueError("need a < b")
    lm = _log_step_means(env)
    ia, ib = env.i(a), env.i(b)
    env.certify_left(float(logsumexp(env.log_one_plus_rho()[:ia + 1] - env.v[:ia + 1])), "expected_hitting_time")
    return float(logsumexp(lm[ia:ib]))


def expected_hitting_time(env: WindowEnvironment, a: int, b: int) -> float:
    """E_a[tau(b)]; +inf when it overflows a double."""
    lv = log_expected_hitting_time(env, a, b)
    return math.exp(lv) if lv < 709.7 else math.inf


def log_hitting_time_variance(env: WindowEnvironment, a: int, b: int) -> float:
    """log Var_a(tau(b)) from the quadruple sum

    4 sum_{a<=k<b} e^{V(k)} sum_{j<=k} (e^{V(j)} + e^{V(j-1)}) (sum_{l<j} e^{-V(l)})^2,

    where (1 + 1/rho_j) e^{V(j)} = e^{V(j)} + e^{V(j-1)}.
    """
    if a >= b:
        raise ValueError("need a < b")
    v = env.v
    ia, ib = env.i(a), env.i(b)
    env.certify_left(float(logsumexp(-v[:ia + 1])), "hitting_time_variance")
    down = np.concatenate(([-np.inf], _logcumsum(-v)[:-1]))          # log sum_{l<j} e^{-V(l)}
    v_prev = np.concatenate(([-np.inf], v[:-1]))
    weight = np.logaddexp(v, v_prev)
    if env.boundary == REFLECT:
        weight[0] = -np.inf                                           # no sites to the left of L
    inner = _logcumsum(weight + 2 * down)
    return float(math.log(4.0) + logsumexp(v[ia:ib] + inner[ia:ib]))


def hitting_time_variance(env: WindowEnvironment, a: int, b: int) -> float:
    lv = log_hitting_time_variance(env, a, b)
    return math.exp(lv) if lv < 709.7 else math.inf


# -- h-transforms ---------------------------------------------------------------------
@dataclass(frozen=True)
class HTransformPair:
    """Doob transforms of the walk on [0, e1] (arrays indexed by site 0..e1).

    ``failure_omegas`` / ``success_omegas`` are right-step probabilities of the
    walk conditioned to hit 0 before e1 and e1 before 0; entries at 0 and e1
    are unused.  ``*_right`` arrays are the same probabilities rounded so that
    forced moves are exact, for the stepping kernels.
    """
    e1: int
    omega0: float
    log_h: np.ndarray
    log_g: np.ndarray
    failure_omegas: np.ndarray
    failure_left: np.ndarray
    success_omegas: np.ndarray
    success_left: np.ndarray
    log_one_minus_p: float

    @property
    def h_values(self) -> np.ndarray:
        return np.exp(self.log_h)

    @property
    def g_values(self) -> np.ndarray:
        return np.exp(self.log_g)

    @property
    def one_minus_p(self) -> float:
        return math.exp(self.log_one_minus_p)

    @property
    def log_p(self) -> float:
        return math.log1p(-self.one_minus_p) if self.log_one_minus_p < -1e-300 else -math.inf

    @property
    def failure_right(self) -> np.ndarray:
        return np.where(self.failure_omegas < self.failure_left, self.failure_omegas, 1.0 - self.failure_left)

    @property
    def success_right(self) -> np.ndarray:
        return np.where(self.success_omegas < self.success_left, self.success_omegas, 1.0 - self.success_left)

    def failure_potential(self) -> np.ndarray:
        """V-hat on 0..e1 with V-hat(0) = 0 (+inf at e1)."""
        with np.errstate(divide="ignore"):
            inc = np.log(self.failure_left[1:self.e1]) - np.log(self.failure_omegas[1:self.e1])
        return np.concatenate(([0.0], np.cumsum(inc), [np.inf]))

    def success_potential(self) -> np.ndarray:
        """V-bar on 0..e1-1 normalised by V-bar(1) = 0, with V-bar(0) = +inf."""
        with np.errstate(divide="ignore"):
            inc = np.log(self.success_left[2:self.e1]) - np.log(self.success_omegas[2:self.e1])
        return np.concatenate(([np.inf, 0.0], np.cumsum(inc)))


def valley_window(env: WindowEnvironment, e1: int) -> tuple[np.ndarray, np.ndarray]:
    """(omegas, V) on sites 0..e1 with V(0) = 0."""
    i0 = env.i(0)
    env.i(e1)
    w = env.omegas[i0:i0 + e1 + 1]
    v = env.v[i0:i0 + e1 + 1] - env.v[i0]
    return w, v


def build_h_transforms(env: WindowEnvironment, e1: int, check: bool = True) -> HTransformPair:
    if e1 < 2:
        raise DegenerateValley("e1 = %d leaves no interior for the transforms" % e1)
    w, v = valley_window(env, e1)
    log_s = float(logsumexp(v[:e1]))
    log_h = np.append(_rev_logcumsum(v[:e1]) - log_s, -np.inf)                  # h(0..e1)
    log_g = np.concatenate(([-np.inf], _logcumsum(v[:e1]) - log_s))             # g(0..e1)
    x = np.arange(1, e1)
    hat = np.zeros(e1 + 1)
    hat_l = np.zeros(e1 + 1)
    bar = np.zeros(e1 + 1)
    bar_l = np.zeros(e1 + 1)
    with np.errstate(divide="ignore"):
        hat[x] = w[x] * np.exp(log_h[x + 1] - log_h[x])
        hat_l[x] = (1 - w[x]) * np.exp(log_h[x - 1] - log_h[x])
        bar[x] = w[x] * np.exp(log_g[x + 1] - log_g[x])
        bar_l[x] = (1 - w[x]) * np.exp(log_g[x - 1] - log_g[x])
    pair = HTransformPair(e1, float(w[0]), log_h, log_g, hat, hat_l, bar, bar_l,
                          math.log(w[0]) + float(v[0]) - log_s)
    if check:
        _check_pair(pair, v)
    return pair


def _check_pair(pair: HTransformPair, v: np.ndarray) -> None:
    e1 = pair.e1
    x = np.arange(1, e1)
    h = pair.h_values
    if np.max(np.abs(h[x] + pair.g_values[x] - 1.0)) > 1e-12:
        raise AssertionError("h + g != 1")
    for right, left in ((pair.failure_omegas, pair.failure_left), (pair.success_omegas, pair.success_left)):
        if np.max(np.abs(right[x] + left[x] - 1.0)) > 1e-12:
            raise AssertionError("transformed probabilities do not sum to one")
    lr = np.diff(v)                                   # log rho_1..e1
    with np.errstate(divide="ignore"):
        hat_inc = np.log(pair.failure_left[x]) - np.log(pair.failure_omegas[x])
        bar_inc = np.log(pair.success_left[x]) - np.log(pair.success_omegas[x])
    # increments of V-hat dominate those of V; those of V-bar are dominated
    if np.any(hat_inc < lr[x - 1] - 1e-10 * (1 + np.abs(lr[x - 1]))):
        raise AssertionError("V-hat rises slower than V")
    if np.any(bar_inc > lr[x - 1] + 1e-10 * (1 + np.abs(lr[x - 1]))):
        raise AssertionError("V-bar rises faster than V")


# -- attempt moments --------------------------------------------------------------------
@dataclass(frozen=True)
class FailureMoments:
    mean: float                 # E[F | failure]
    second: float               # E[F^2 | failure]
    one_minus_p: float
    two_omega0_m1_hat: float    # 2 omega_0 M1-hat (h(1)-weighted); equals p * mean
    rpm_bound: float            # 4 omega_0 R+ + 4 (1 - omega_0) R- as printed; diagnostic, not a bound
    boundary: str


def _left_round_trip(env: WindowEnvironment) -> tuple[float, float]:
    """(log E, log E[T^2]) for the walk started at -1 until it hits 0."""
    i0 = env.i(0)
    if i0 == 0:
        raise TruncationUncertified("no environment to the left of 0")
    v = env.v[:i0]
    lpr = env.log_one_plus_rho()[:i0]
    log_m = v + _logcumsum(lpr - v)                       # m_j for j = L..-1
    env.certify_left(float(logsumexp(lpr - v)), "failure_moments")
    log_ex = _rev_logcumsum(log_m)                        # E_x[T] = sum_{x<=j<=-1} m_j
    log_green = lpr + v[-1] - v                           # G(-1, x) = (1+rho_x) e^{V(-1)-V(x)}
    log_mean = float(log_m[-1])
    s = float(logsumexp(log_green + log_ex))
    second = 2.0 * math.exp(s) - math.exp(log_mean)
    return log_mean, math.log(second)


def _right_round_trip(pair: HTransformPair, v: np.ndarray) -> tuple[float, float]:
    """(log E, log E[T^2]) for the failure-conditioned walk from 1 until it hits 0."""
    e1 = pair.e1
    lh = pair.log_h
    k = np.arange(1, e1)
    log_w = np.logaddexp(-v[k - 1], -v[k])                # e^{-V(k-1)} + e^{-V(k)}
    terms = 2 * lh[k] + log_w
    suffix = _rev_logcumsum(terms)                        # index j-1 -> sum_{k>=j}
    log_n = v[k - 1] - lh[k] - lh[k - 1] + suffix         # n_j = E_j[tau(j-1)], j = 1..e1-1
    log_ex = _logcumsum(log_n)                            # E_x[T] = sum_{j<=x} n_j
    log_green = terms - lh[1]                             # G(1, x) = h(x)^2 (...) / h(1)
    log_mean = float(log_n[0])
    s = float(logsumexp(log_green + log_ex))
    second = 2.0 * math.exp(s) - math.exp(log_mean)
    return log_mean, math.log(second)


def _rpm(env: WindowEnvironment, pair: HTransformPair, v: np.ndarray) -> float:
    e1 = pair.e1
    vh = pair.failure_potential()[:e1]                    # V-hat(0..e1-1), finite
    r_plus = 0.0
    for i in range(1, e1):
        first = 1.0 + 2.0 * sum(math.exp(vh[j] - vh[i - 1]) for j in range(0, i - 1))
        second = math.exp(-vh[i - 1]) + 2.0 * sum(math.exp(-vh[j - 1]) for j in range(i + 1, e1))
        r_plus += first * second
    i0 = env.i(0)
    lv = env.v[:i0 + 1] - env.v[i0]                       # V(L..0), V(0) = 0
    up = _rev_logcumsum(lv)
    a = np.logaddexp(0.0, _LOG2 + up - lv)
    down = np.concatenate(([-np.inf], _logcumsum(-lv)[:-1]))
    b = np.logaddexp(-lv, _LOG2 + down)
    r_minus = math.exp(float(logsumexp(a + b)))
    return 4 * pair.omega0 * r_plus + 4 * (1 - pair.omega0) * r_minus


def failure_moments(env: WindowEnvironment, pair: HTransformPair, with_rpm: bool = True) -> FailureMoments:
    """Moments of one unsuccessful attempt (leave 0, return to 0 before e1)."""
    _, v = valley_window(env, pair.e1)
    w0 = pair.omega0
    one_minus_p = pair.one_minus_p
    p = 1.0 - one_minus_p
    h1 = float(math.exp(pair.log_h[1]))
    lm_l, ls_l = _left_round_trip(env)
    lm_r, ls_r = _right_round_trip(pair, v)
    left_w, right_w = 1.0 - w0, w0 * h1
    first = left_w * (1 + math.exp(lm_l)) + right_w * (1 + math.exp(lm_r))
    second = (left_w * (1 + 2 * math.exp(lm_l) + math.exp(ls_l))
              + right_w * (1 + 2 * math.exp(lm_r) + math.exp(ls_r)))
    # 2 omega_0 (sum_{i<0} e^{-V(i)} + sum_{0<=j<e1} e^{-V(j)} h(j) h(j+1))
    i0 = env.i(0)
    lv_left = -(env.v[:i0] - env.v[i0])
    if env.boundary == REFLECT:
        lv_left = lv_left.copy()
    right_terms = -v[:pair.e1] + pair.log_h[:pair.e1] + pair.log_h[1:pair.e1 + 1]
    m1_hat = math.exp(logsumexp(lv_left)) + math.exp(logsumexp(right_terms))
    rpm = _rpm(env, pair, v) if with_rpm else math.nan
    return FailureMoments(first / p, second / p, one_minus_p, 2 * w0 * m1_hat, rpm, env.boundary)


def success_mean_bound(pair: HTransformPair) -> float:
    """2 sum_{0<=i<=j<e1} e^{Vbar(j) - Vbar(i)} (an upper bound on E[G])."""
    vb = pair.success_potential()[1:pair.e1]              # V-bar(1..e1-1)
    inner = _logcumsum(-vb)                               # log sum_{1<=i<=j} e^{-Vbar(i)}
    tot = float(logsumexp(vb + inner)) if vb.size else -math.inf
    return 2.0 * (1.0 + math.exp(tot))                    # i = j = 0 contributes 1


def success_mean(pair: HTransformPair) -> float:
    """E[G] exactly: one step to 1, then the success-conditioned walk from 1 to e1."""
    e1 = pair.e1
    x = np.arange(1, e1)
    vb = pair.success_potential()[1:e1]
    with np.errstate(divide="ignore"):
        lpr = -np.log(pair.success_omegas[x])             # log(1 + rho-bar), rho-bar_1 = 0
    lpr[0] = 0.0
    log_m = vb + _logcumsum(lpr - vb)
    return 1.0 + math.exp(float(logsumexp(log_m)))


# -- reference linear solves --------------------------------------------------------------
def _step_probs(omegas: np.ndarray, reflect: bool) -> np.ndarray:
    r = np.array(omegas, dtype=float)
    if reflect:
        r[0] = 1.0
    return r


def _tridiagonal_solve(right: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (I - Q) u = rhs for a nearest-neighbour chain killed outside the index range.

    Gaussian elimination in which every pivot is rebuilt from killing mass and the
    forward rate, so no step subtracts (stable even across deep valleys).
    """
    n = right.size
    up = right.copy()
    up[-1] = 0.0
    down = 1.0 - right
    down[0] = 0.0
    kill = np.zeros(n)
    kill[-1] += right[-1]
    kill[0] += 1.0 - right[0]
    pivot = np.empty(n)
    b = np.array(rhs, dtype=float)
    excess = kill[0]
    pivot[0] = excess + up[0]
    for i in range(1, n):
        excess = kill[i] + down[i] * excess / pivot[i - 1]
        pivot[i] = excess + up[i]
        b[i] += down[i] * b[i - 1] / pivot[i - 1]
    u = np.empty(n)
    u[-1] = b[-1] / pivot[-1]
    for i in range(n - 2, -1, -1):
        u[i] = (b[i] + up[i] * u[i + 1]) / pivot[i]
    return u


def dense_exit_probability(omegas, a: int, x: int, b: int) -> float:
    """P_x(tau(b) < tau(a)) by a linear solve; sites are array indices."""
    if not a <= x <= b:
        raise ValueError("need a <= x <= b")
    if x in (a, b):
        return float(x == b)
    r = np.asarray(omegas, dtype=float)[a + 1:b]
    rhs = np.zeros(r.size)
    rhs[-1] = r[-1]
    return float(_tridiagonal_solve(r, rhs)[x - a - 1])


def dense_hitting_moments(omegas, a: int, b: int, reflect: bool = True) -> tuple[float, float]:
    """(E_a[tau(b)], Var_a(tau(b))) on sites 0..b with index 0 reflecting."""
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    r = _step_probs(np.asarray(omegas, dtype=float)[:b], reflect)
    m = _tridiagonal_solve(r, np.ones(b))
    qm = np.zeros(b)
    qm[:-1] += r[:-1] * m[1:]
    qm[1:] += (1.0 - r[1:]) * m[:-1]
    s = _tridiagonal_solve(r, 1.0 + 2.0 * qm)
    return float(m[a]), float(s[a] - m[a] ** 2)


@dataclass(frozen=True)
class ConsistencyReport:
    windows: int
    max_rel_exit: float
    max_rel_mean: float
    max_rel_variance: float
    seconds: float
    tolerance: float

    @property
    def max_rel(self) -> float:
        return max(self.max_rel_exit, self.max_rel_mean, self.max_rel_variance)

    @property
    def passed(self) -> bool:
        return self.max_rel <= self.tolerance


def _rel_err(got: float, want: float) -> float:
    # a one-step walk from a reflecting cell has variance exactly 0
    return abs(got - want) / abs(want) if want != 0 else abs(got)


def consistency_check(model, windows: int = 1000, max_length: int = 200, rng=0,
                      tolerance: float = 1e-8) -> ConsistencyReport:
    """Closed forms against linear solves on random reflecting windows."""
    from .env_model import sample_omega_block
    from .rng import as_generator

    gen = as_generator(rng)
    worst = [0.0, 0.0, 0.0]
    start = time.perf_counter()
    for _ in range(int(windows)):
        length = int(gen.integers(2, max_length + 1))
        w = sample_omega_block(model, length + 1, gen)
        env = WindowEnvironment(0, w, REFLECT)
        a, b = np.sort(gen.choice(length + 1, size=2, replace=False))
        x = int(gen.integers(a, b + 1))
        mean, var = dense_hitting_moments(w, int(a), int(b))
        pairs = ((exit_probability(env, int(a), x, int(b)), dense_exit_probability(w, int(a), x, int(b))),
                 (expected_hitting_time(env, int(a), int(b)), mean),
                 (hitting_time_variance(env, int(a), int(b)), var))
        for k, (got, want) in enumerate(pairs):
            worst[k] = max(worst[k], _rel_err(got, want))
    return ConsistencyReport(int(windows), worst[0], worst[1], worst[2], time.perf_counter() - start,
                             tolerance)
