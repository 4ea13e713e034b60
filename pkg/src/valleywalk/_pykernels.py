"""Pure-Python stepping kernels (fallback and reference for the compiled ones).

Every kernel consumes uniforms from a caller-supplied buffer, one per step and
one per geometric or direction draw, so the compiled and interpreted versions
produce identical results.  Kernels are resumable: when they run out of
uniforms or reach the left end of the environment array they return a status
and leave enough state for the caller to continue.
"""
from math import exp, floor, log, log1p

HIT_HI = 1
HIT_LO = 2
EDGE_LEFT = 3
EDGE_RIGHT = 4
NEED_U = 5
BUDGET = 6
DONE = 7

BACKEND = "python"


def walk(omega, pos, lo, hi, mark, edge, u, ui, max_steps):
    """Step until pos == hi or pos == lo; returns (status, pos, steps, ui, marked).

    Positions are array indices; moving below ``edge`` or past the array end
    returns an edge status.  ``marked`` counts steps landing at positions <= mark.
    """
    n = len(omega)
    nu = len(u)
    steps = 0
    marked = 0
    while steps < max_steps:
        if ui >= nu:
            return NEED_U, pos, steps, ui, marked
        if u[ui] < omega[pos]:
            pos += 1
        else:
            pos -= 1
        ui += 1
        steps += 1
        if pos <= mark:
            marked += 1
        if pos == hi:
            return HIT_HI, pos, steps, ui, marked
        if pos == lo:
            return HIT_LO, pos, steps, ui, marked
        if pos < edge:
            return EDGE_LEFT, pos, steps, ui, marked
        if pos >= n:
            return EDGE_RIGHT, pos, steps, ui, marked
    return BUDGET, pos, steps, ui, marked


def fast_valley(env, zero, e1, hat, bar, log_p, p_left, mark, edge, u, ui, state, count,
                out_tau, out_mark, max_steps):
    """Repeated valley crossings by the attempt decomposition.

    ``state`` = [done, phase, remaining, pos, steps, marked]; phases are
    0 new sample, 1 new attempt, 2 leftward failure in ``env``, 3 rightward
    failure under ``hat`` (valley coordinates), 4 success under ``bar``.
    Returns (status, ui).
    """
    nu = len(u)
    done, phase, remaining, pos, steps, marked = state[0], state[1], state[2], state[3], state[4], state[5]
    status = DONE
    while done < count:
        if phase == 0:
            if ui >= nu:
                status = NEED_U
                break
            x = u[ui]
            ui += 1
            steps = 0
            marked = 0
            if log_p == 0.0:
                remaining = max_steps + 1
            else:
                g = log1p(-x) / log_p
                remaining = max_steps + 1 if g > max_steps else int(floor(g))
            if remaining > max_steps:
                out_tau[done] = -1
                out_mark[done] = 0
                done += 1
                continue
            phase = 1
        elif phase == 1:
            if remaining == 0:
                steps += 1
                if e1 == 1:
                    out_tau[done] = steps
                    out_mark[done] = marked
                    done += 1
                    phase = 0
                else:
                    pos = 1
                    phase = 4
                continue
            if ui >= nu:
                status = NEED_U
                break
            x = u[ui]
            ui += 1
            steps += 1
            if x < p_left:
                pos = zero - 1
                if pos <= mark:
                    marked += 1
                phase = 2
                if pos < edge:
                    status = EDGE_LEFT
                    break
            else:
                pos = 1
                phase = 3
        elif phase == 2:
            if steps >= max_steps:
                out_tau[done] = -1
                out_mark[done] = marked
                done += 1
                phase = 0
                continue
            if ui >= nu:
                status = NEED_U
                break
            if u[ui] < env[pos]:
                pos += 1
            else:
                pos -= 1
            ui += 1
            steps += 1
            if pos <= mark:
                marked += 1
            if pos == zero:
                remaining -= 1
                phase = 1
            elif pos < edge:
                status = EDGE_LEFT
                break
        elif phase == 3:
            if steps >= max_steps:
                out_tau[done] = -1
                out_mark[done] = marked
                done += 1
                phase = 0
                continue
            if ui >= nu:
                status = NEED_U
                break
            if u[ui] < hat[pos]:
                pos += 1
            else:
                pos -= 1
            ui += 1
            steps += 1
            if pos == 0:
                remaining -= 1
                phase = 1
        else:
            if steps >= max_steps:
                out_tau[done] = -1
                out_mark[done] = marked
                done += 1
                phase = 0
                continue
            if ui >= nu:
                status = NEED_U
                break
            if u[ui] < bar[pos]:
                pos += 1
            else:
                pos -= 1
            ui += 1
            steps += 1
            if pos == e1:
                out_tau[done] = steps
                out_mark[done] = marked
                done += 1
                phase = 0
    state[0], state[1], state[2], state[3], state[4], state[5] = done, phase, remaining, pos, steps, marked
    return status, ui


def valley_transform(env, zero, e1, hat, bar, work):
    """Doob transforms of the valley env[zero .. zero+e1] into ``hat``/``bar`` (valley coords).

    ``work`` needs 3*(e1+1) doubles.  Returns (log_p, p_left).
    """
    w0 = env[zero]
    if e1 == 1:
        return log(1.0 - w0), 1.0
    m = e1 + 1
    # work[0:m] = V, work[m:2m] = prefix sums of e^{V-H}, work[2m:3m] = suffix sums
    work[0] = 0.0
    top = 0.0
    k = 1
    while k < e1:
        w = env[zero + k]
        work[k] = work[k - 1] + (log1p(-w) - log(w))
        if work[k] > top:
            top = work[k]
        k += 1
    work[m] = 0.0
    k = 0
    while k < e1:
        work[m + k + 1] = work[m + k] + exp(work[k] - top)
        k += 1
    work[2 * m + e1] = 0.0
    k = e1 - 1
    while k >= 0:
        work[2 * m + k] = work[2 * m + k + 1] + exp(work[k] - top)
        k -= 1
    total = work[m + e1]
    k = 1
    while k < e1:
        w = env[zero + k]
        # h(x) = suffix[x] / total, g(x) = prefix[x] / total
        r = w * work[2 * m + k + 1] / work[2 * m + k]
        q = (1.0 - w) * work[2 * m + k - 1] / work[2 * m + k]
        hat[k] = r if r < q else 1.0 - q
        r = w * work[m + k + 1] / work[m + k]
        q = (1.0 - w) * work[m + k - 1] / work[m + k]
        bar[k] = r if r < q else 1.0 - q
        k += 1
    one_minus_p = w0 * exp(-top) / total
    p = 1.0 - one_minus_p
    return log1p(-one_minus_p), (1.0 - w0) / p


def crossing_batch(fast, env, seg_lo, zero, e1, u, ui, s, s_end, out_tau, max_steps,
                   hat, bar, work, state, imark):
    """Crossing times tau(e1) for samples s..s_end-1, each with its own environment segment.

    Sample j uses env[seg_lo[j] .. zero[j] + e1[j]].  On NEED_U or EDGE_LEFT the
    current sample must be restarted from the returned ``ui_start``.
    Returns (status, s, ui, ui_start).
    """
    while s < s_end:
        ui_start = ui
        z = zero[s]
        n1 = e1[s]
        if fast:
            log_p, p_left = valley_transform(env, z, n1, hat, bar, work)
            state[0] = 0
            state[1] = 0
            status, ui = fast_valley(env, z, n1, hat, bar, log_p, p_left, -1, seg_lo[s],
                                     u, ui, state, 1, out_tau[s:s + 1], imark, max_steps)
            if status != DONE:
                return status, s, ui, ui_start
        else:
            status, pos, steps, ui, _ = walk(env, z, -2, z + n1, -1, seg_lo[s], u, ui, max_steps)
            if status == HIT_HI:
                out_tau[s] = steps
            elif status == BUDGET:
                out_tau[s] = -1
            else:
                return status, s, ui, ui_start
        s += 1
    return DONE, s, ui, ui
