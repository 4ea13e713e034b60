import numpy as np
import pytest
from hypothesis import given, strategies as st

from valleywalk import kernels
from valleywalk.env_model import EnvironmentModel
from valleywalk.quenched import WindowEnvironment, build_h_transforms
from valleywalk.rng import stream
from valleywalk.walker import _ValleyScratch, _build_segments

PY = kernels.load("python")
try:
    CY = kernels.load("cython")
except ImportError:                     # extension not built: only the fallback is testable
    CY = None
needs_cython = pytest.mark.skipif(CY is None, reason="compiled kernels not built")


def _omegas(seed, size):
    return np.ascontiguousarray(stream(seed, 1).beta(3.0, 1.5, size=size))


def _walk_chunked(mod, omega, chunk, total, seed):
    """Run walk to completion feeding uniforms ``chunk`` at a time."""
    u_all = stream(seed, 2).random(total)
    pos, steps, marked, used = 20, 0, 0, 0
    while True:
        u = u_all[used:used + chunk]
        status, pos, s, ui, m = mod.walk(omega, pos, 0, omega.size - 1, 10, 0, u, 0, 10 ** 9)
        steps, marked, used = steps + s, marked + m, used + ui
        if status != kernels.NEED_U or used >= total:
            return status, pos, steps, marked


@given(st.integers(0, 10 ** 6), st.sampled_from([1, 7, 1000, 1 << 20]))
def test_walk_resumes_identically_across_chunk_sizes(seed, chunk):
    omega = _omegas(seed, 60)
    assert _walk_chunked(PY, omega, chunk, 1 << 20, seed) == _walk_chunked(PY, omega, 1 << 20, 1 << 20, seed)


@needs_cython
@given(st.integers(0, 10 ** 6), st.sampled_from([3, 1000, 1 << 20]))
def test_walk_backends_bit_identical(seed, chunk):
    omega = _omegas(seed, 60)
    assert _walk_chunked(CY, omega, chunk, 1 << 20, seed) == _walk_chunked(PY, omega, chunk, 1 << 20, seed)


def test_walk_statuses():
    omega = np.ones(10)
    status, pos, steps, ui, _ = PY.walk(omega, 2, 0, 7, -1, 0, np.zeros(20), 0, 100)
    assert (status, pos, steps, ui) == (kernels.HIT_HI, 7, 5, 5)
    status, *_ = PY.walk(omega, 2, 0, 7, -1, 0, np.zeros(3), 0, 100)
    assert status == kernels.NEED_U
    status, *_ = PY.walk(omega, 2, 0, 7, -1, 0, np.zeros(20), 0, 2)
    assert status == kernels.BUDGET
    status, pos, *_ = PY.walk(np.zeros(10), 3, -5, 9, -1, 2, np.zeros(20), 0, 100)
    assert (status, pos) == (kernels.EDGE_LEFT, 1)


def _random_valley(seed):
    model = EnvironmentModel.beta(3.0, 1.5)
    omegas, seg_lo, zero, e1 = _build_segments(model, 1, stream(seed, 1), 4, "conditioned")
    return np.ascontiguousarray(omegas), int(zero[0]), int(e1[0])


@given(st.integers(0, 10 ** 6))
def test_valley_transform_matches_quenched_h_transforms(seed):
    env, zero, e1 = _random_valley(seed)
    if e1 < 2:
        return
    scratch = _ValleyScratch(e1)
    log_p, p_left = PY.valley_transform(env, zero, e1, scratch.hat, scratch.bar, scratch.work)
    pair = build_h_transforms(WindowEnvironment(-zero, env[:zero + e1 + 1]), e1)
    assert log_p == pytest.approx(pair.log_p, rel=1e-10, abs=1e-14)
    assert np.allclose(scratch.hat[1:e1], pair.failure_right[1:e1], rtol=1e-10, atol=1e-15)
    assert np.allclose(scratch.bar[1:e1], pair.success_right[1:e1], rtol=1e-10, atol=1e-15)


def _batch(mod, fast, size, seed, chunk):
    model = EnvironmentModel.beta(3.0, 1.5)
    omegas, seg_lo, zero, e1 = _build_segments(model, size, stream(seed, 1), 8, "conditioned")
    u_all = stream(seed, 2).random(1 << 22)
    scratch = _ValleyScratch(int(e1.max()))
    taus = np.zeros(size, dtype=np.int64)
    s, offset = 0, 0
    while s < size:
        u = u_all[offset:offset + chunk]
        status, s, ui, ui_start = mod.crossing_batch(fast, omegas, seg_lo, zero, e1, u, 0, s, size, taus,
                                                     10 ** 8, scratch.hat, scratch.bar, scratch.work,
                                                     scratch.state, scratch.imark)
        if status == kernels.DONE:
            break
        assert status == kernels.NEED_U
        offset += ui_start              # restart the unfinished sample on fresh uniforms
    return taus


@needs_cython
@pytest.mark.parametrize("fast", [True, False])
@pytest.mark.parametrize("chunk", [1 << 12, 1 << 22])
def test_crossing_batch_backends_bit_identical(fast, chunk):
    a = _batch(CY, fast, 300, 11, chunk)
    b = _batch(PY, fast, 300, 11, chunk)
    assert np.array_equal(a, b) and (a > 0).all()


def test_selected_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
    with pytest.raises(ValueError):
        kernels.load("fortran")
