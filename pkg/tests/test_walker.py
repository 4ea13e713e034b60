import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ks_2samp

from test_quenched import MEAN_0_11, VAR_0_11, WINDOW
from valleywalk.env_model import EnvironmentModel, sample_omega_block
from valleywalk.errors import DegenerateValley, WindowTooSmall
from valleywalk.quenched import REFLECT, WindowEnvironment, expected_hitting_time, hitting_time_variance
from valleywalk.walker import (LazyEnvironment, crossing_time_batch, measure_left_time, simulate_hitting_time,
                               simulate_tau_n, simulate_valley_crossing_direct, simulate_valley_crossing_fast)


def test_deterministic_right_walk():
    env = LazyEnvironment.fixed(np.ones(10), 0)
    out = simulate_hitting_time(env, 0, 5, rng=1)
    assert (out.tau, out.truncated) == (5, False)


@given(st.integers(0, 10 ** 6), st.integers(1, 12))
def test_hitting_time_parity(seed, target):
    env = LazyEnvironment.iid(EnvironmentModel.beta(3.0, 1.5), seed)
    out = simulate_hitting_time(env, 0, target, rng=seed)
    assert not out.truncated and out.tau >= target and (out.tau - target) % 2 == 0


def test_mean_matches_quenched_formula():
    env = WindowEnvironment(0, WINDOW, REFLECT)
    taus = simulate_valley_crossing_direct(env, 0, 11, count=20000, rng=5)
    se = math.sqrt(VAR_0_11 / taus.size)
    assert abs(taus.mean() - MEAN_0_11) < 4 * se
    assert taus.var() == pytest.approx(VAR_0_11, rel=0.1)


def test_budget_truncation_is_reported():
    env = WindowEnvironment(0, np.full(200, 0.5), REFLECT)
    out = simulate_hitting_time(env, 0, 150, budget=10, rng=0)
    assert out.truncated and out.tau == 10
    with pytest.raises(ValueError):
        simulate_hitting_time(env, 0, 150, budget=0, rng=0)


def test_fixed_window_edge_raises():
    env = LazyEnvironment.fixed(np.zeros(10), 5)
    with pytest.raises(WindowTooSmall):
        simulate_hitting_time(env, 0, 3, rng=0)


def test_left_time_counts_steps_left_of_mark():
    env = LazyEnvironment.fixed(np.ones(10), 3)
    assert simulate_hitting_time(env, -2, 4, rng=0, mark=-1).left_time == 1
    env = LazyEnvironment.iid(EnvironmentModel.beta(3.0, 1.5), 3)
    left = measure_left_time(env, 0, 0, 30, rng=3)
    assert left == simulate_hitting_time(env, 0, 30, rng=3, mark=0).left_time
    assert measure_left_time(env, 0, 5, 5) == 0
    with pytest.raises(ValueError):
        measure_left_time(env, 1, 0, 30)


def _deep_valley(seed):
    model = EnvironmentModel.beta(3.0, 1.5)
    rng = np.random.default_rng(seed)
    while True:
        w = sample_omega_block(model, 600, rng)
        v = np.cumsum(np.log((1 - w[501:]) / w[501:]))
        k = np.flatnonzero(v <= 0)
        if k.size and v[:k[0]].max(initial=0) > 2.5:
            return WindowEnvironment(-500, w), int(k[0] + 1)


def test_fast_and_direct_crossings_share_a_law():
    env, e1 = _deep_valley(1)
    fast = simulate_valley_crossing_fast(env, 0, e1, count=20000, rng=10)
    direct = simulate_valley_crossing_direct(env, 0, e1, count=20000, rng=11)
    assert (fast > 0).all() and (direct > 0).all()
    assert ks_2samp(fast, direct).statistic < 0.02
    want = expected_hitting_time(env, 0, e1)
    assert abs(fast.mean() - want) < 4 * math.sqrt(hitting_time_variance(env, 0, e1) / fast.size)


def test_degenerate_valley_rejected():
    env = WindowEnvironment(0, np.full(5, 0.5))
    with pytest.raises(DegenerateValley):
        simulate_valley_crossing_fast(env, 0, 0, rng=0)
    with pytest.raises(DegenerateValley):
        simulate_valley_crossing_direct(env, 0, 0, rng=0)


def test_tau_n_reproducible_and_consistent(beta_3_15):
    a = simulate_tau_n(beta_3_15, 2000, seed=3, replicate=4)
    b = simulate_tau_n(beta_3_15, 2000, seed=3, replicate=4)
    assert a.to_record() | {"wall_time": 0} == b.to_record() | {"wall_time": 0}
    assert not a.truncated and 0 < a.tau_ia <= a.tau
    assert a.tau == a.tau_ia + sum(c.time for c in a.crossings)
    assert all(c.height >= a.threshold for c in a.crossings)
    if a.k_deep == 0:
        assert a.tau_ia == a.tau


def test_tau_n_fast_and_direct_see_the_same_valleys(beta_3_15):
    a = simulate_tau_n(beta_3_15, 3000, seed=8, replicate=1, fast=True)
    b = simulate_tau_n(beta_3_15, 3000, seed=8, replicate=1, fast=False)
    assert a.e_n == b.e_n
    assert [c.bottom for c in a.crossings] == [c.bottom for c in b.crossings]


def test_tau_n_site_target(beta_3_15):
    out = simulate_tau_n(beta_3_15, 500, seed=2, target=500)
    assert out.e_n == 500 and not out.truncated and out.tau >= 500
    assert all(c.exit <= 500 for c in out.crossings)
    with pytest.raises(ValueError):
        simulate_tau_n(beta_3_15, 500, seed=2, target=501)


def test_tau_n_budget(beta_3_15):
    out = simulate_tau_n(beta_3_15, 5000, seed=2, budget=100)
    assert out.truncated and out.tau <= 100


def test_crossing_batch_keyed_by_seed_and_batch(beta_3_15):
    a = crossing_time_batch(beta_3_15, 500, seed=1, batch=0)
    b = crossing_time_batch(beta_3_15, 500, seed=1, batch=0, chunk=1 << 12)
    c = crossing_time_batch(beta_3_15, 500, seed=1, batch=1)
    assert np.array_equal(a.tau, b.tau) and not np.array_equal(a.tau, c.tau)
    assert a.truncated == 0 and (a.tau >= a.e1).all()


def test_crossing_batch_fast_matches_direct(beta_3_15):
    fast = crossing_time_batch(beta_3_15, 20000, seed=4, batch=0, fast=True).tau
    direct = crossing_time_batch(beta_3_15, 20000, seed=5, batch=0, fast=False).tau
    assert ks_2samp(fast, direct).pvalue > 1e-3
