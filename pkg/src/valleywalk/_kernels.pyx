# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels; same semantics and arithmetic as ``_pykernels``."""
from libc.math cimport exp, floor, log, log1p

cdef enum:
    C_HIT_HI = 1
    C_HIT_LO = 2
    C_EDGE_LEFT = 3
    C_EDGE_RIGHT = 4
    C_NEED_U = 5
    C_BUDGET = 6
    C_DONE = 7

HIT_HI = C_HIT_HI
HIT_LO = C_HIT_LO
EDGE_LEFT = C_EDGE_LEFT
EDGE_RIGHT = C_EDGE_RIGHT
NEED_U = C_NEED_U
BUDGET = C_BUDGET
DONE = C_DONE

BACKEND = "cython"


def walk(const double[::1] omega, long long pos, long long lo, long long hi, long long mark,
         long long edge, const double[::1] u, long long ui, long long max_steps):
    cdef long long n = omega.shape[0]
    cdef long long nu = u.shape[0]
    cdef long long steps = 0
    cdef long long marked = 0
    cdef int status = C_BUDGET
    with nogil:
        while steps < max_steps:
            if ui >= nu:
                status = C_NEED_U
                break
            if u[ui] < omega[pos]:
                pos += 1
            else:
                pos -= 1
            ui += 1
            steps += 1
            if pos <= mark:
                marked += 1
            if pos == hi:
                status = C_HIT_HI
                break
            if pos == lo:
                status = C_HIT_LO
                break
            if pos < edge:
                status = C_EDGE_LEFT
                break
            if pos >= n:
                status = C_EDGE_RIGHT
                break
    return status, pos, steps, ui, marked


cdef int _fast_valley(const double[::1] env, long long zero, long long e1, const double[::1] hat,
                      const double[::1] bar, double log_p, double p_left, long long mark, long long edge,
                      const double[::1] u, long long* ui_ptr, long long[::1] state, long long count,
                      long long[::1] out_tau, long long[::1] out_mark, long long max_steps) noexcept nogil:
    cdef long long nu = u.shape[0]
    cdef long long ui = ui_ptr[0]
    cdef long long done = state[0], phase = state[1], remaining = state[2]
    cdef long long pos = state[3], steps = state[4], marked = state[5]
    cdef int status = C_DONE
    cdef double x, g
    while done < count:
        if phase == 0:
            if ui >= nu:
                status = C_NEED_U
                break
            x = u[ui]
            ui += 1
            steps = 0
            marked = 0
            if log_p == 0.0:
                remaining = max_steps + 1
            else:
                g = log1p(-x) / log_p
                if g > max_steps:
                    remaining = max_steps + 1
                else:
                    remaining = <long long>floor(g)
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
                status = C_NEED_U
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
                    status = C_EDGE_LEFT
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
                status = C_NEED_U
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
                status = C_EDGE_LEFT
                break
        elif phase == 3:
            if steps >= max_steps:
                out_tau[done] = -1
                out_mark[done] = marked
                done += 1
                phase = 0
                continue
            if ui >= nu:
                status = C_NEED_U
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
                status = C_NEED_U
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
    state[0] = done
    state[1] = phase
    state[2] = remaining
    state[3] = pos
    state[4] = steps
    state[5] = marked
    ui_ptr[0] = ui
    return status


def fast_valley(const double[::1] env, long long zero, long long e1, const double[::1] hat,
                const double[::1] bar, double log_p, double p_left, long long mark, long long edge,
                const double[::1] u, long long ui, long long[::1] state, long long count,
                long long[::1] out_tau, long long[::1] out_mark, long long max_steps):
    cdef int status
    with nogil:
        status = _fast_valley(env, zero, e1, hat, bar, log_p, p_left, mark, edge, u, &ui, state, count,
                              out_tau, out_mark, max_steps)
    return status, ui


cdef void _valley_transform(const double[::1] env, long long zero, long long e1, double[::1] hat,
                            double[::1] bar, double[::1] work, double* log_p, double* p_left) noexcept nogil:
    cdef double w0 = env[zero]
    cdef long long m, k
    cdef double top, w, r, q, total, one_minus_p, p
    if e1 == 1:
        log_p[0] = log(1.0 - w0)
        p_left[0] = 1.0
        return
    m = e1 + 1
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
        r = w * work[2 * m + k + 1] / work[2 * m + k]
        q = (1.0 - w) * work[2 * m + k - 1] / work[2 * m + k]
        hat[k] = r if r < q else 1.0 - q
        r = w * work[m + k + 1] / work[m + k]
        q = (1.0 - w) * work[m + k - 1] / work[m + k]
        bar[k] = r if r < q else 1.0 - q
        k += 1
    one_minus_p = w0 * exp(-top) / total
    p = 1.0 - one_minus_p
    log_p[0] = log1p(-one_minus_p)
    p_left[0] = (1.0 - w0) / p


def valley_transform(const double[::1] env, long long zero, long long e1, double[::1] hat,
                     double[::1] bar, double[::1] work):
    cdef double log_p = 0.0, p_left = 0.0
    _valley_transform(env, zero, e1, hat, bar, work, &log_p, &p_left)
    return log_p, p_left


def crossing_batch(bint fast, const double[::1] env, const long long[::1] seg_lo, const long long[::1] zero,
                   const long long[::1] e1, const double[::1] u, long long ui, long long s, long long s_end,
                   long long[::1] out_tau, long long max_steps, double[::1] hat, double[::1] bar,
                   double[::1] work, long long[::1] state, long long[::1] imark):
    cdef long long ui_start = ui
    cdef long long z, n1, pos, steps, nu = u.shape[0], n = env.shape[0], edge
    cdef double log_p, p_left
    cdef int status = C_DONE
    with nogil:
        while s < s_end:
            ui_start = ui
            z = zero[s]
            n1 = e1[s]
            edge = seg_lo[s]
            if fast:
                _valley_transform(env, z, n1, hat, bar, work, &log_p, &p_left)
                state[0] = 0
                state[1] = 0
                status = _fast_valley(env, z, n1, hat, bar, log_p, p_left, -1, edge, u, &ui, state, 1,
                                      out_tau[s:s + 1], imark, max_steps)
                if status != C_DONE:
                    break
            else:
                pos = z
                steps = 0
                status = C_BUDGET
                while steps < max_steps:
                    if ui >= nu:
                        status = C_NEED_U
                        break
                    if u[ui] < env[pos]:
                        pos += 1
                    else:
                        pos -= 1
                    ui += 1
                    steps += 1
                    if pos == z + n1:
                        status = C_HIT_HI
                        break
                    if pos < edge:
                        status = C_EDGE_LEFT
                        break
                    if pos >= n:
                        status = C_EDGE_RIGHT
                        break
                if status == C_HIT_HI:
                    out_tau[s] = steps
                elif status == C_BUDGET:
                    out_tau[s] = -1
                else:
                    break
            s += 1
            status = C_DONE
    if status != C_DONE:
        return status, s, ui, ui_start
    return C_DONE, s, ui, ui
