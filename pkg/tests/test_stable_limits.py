import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special
from scipy.stats import levy_stable

from valleywalk.env_model import EnvironmentModel
from valleywalk.errors import MethodUnavailable
from valleywalk.stable_limits import (CA1, EULER_GAMMA, Estimate, StableLaw, beta_c_k_variants, cf_distance,
                                     compute_constants, beta_closed_form_scale, estimate_c_k, euler_reflection_residual,
                                     merge_estimates, sample_renewal_series, stable_cdf, stable_cf, stable_sample,
                                     tail_plateau, limit_prediction, stable_scale)

# frozen from 40-digit mpmath: exp((-it)^1.5) and exp(-pi|t|/2 - i t log|t|)
CF_15_AT_1 = complex(0.3748528086203822999, -0.3203156354342154995)
CF_15_AT_MINUS_HALF = complex(0.7545897527558614211, 0.1926783972023884010)
CF_CA1_AT_07 = complex(0.3226926674630870013, 0.0822843893442297445)


def test_cf_values():
    law = StableLaw(1.5)
    assert abs(stable_cf(law, 1.0) - CF_15_AT_1) < 1e-15
    assert abs(stable_cf(law, -0.5) - CF_15_AT_MINUS_HALF) < 1e-15
    assert abs(stable_cf(StableLaw(1.0, CA1), 0.7) - CF_CA1_AT_07) < 1e-15


@pytest.mark.parametrize("law", [StableLaw(1.5), StableLaw(1.0, CA1), StableLaw(0.6), StableLaw(1.2, "CA", 3.0, -1.0)])
def test_cf_normalization_and_symmetry(law):
    assert stable_cf(law, 0.0) == 1.0
    t = np.linspace(-5, 5, 101)
    assert np.array_equal(stable_cf(law, -t), np.conj(stable_cf(law, t)))
    assert np.all(np.abs(stable_cf(law, t)) <= 1.0 + 1e-15)


@given(st.floats(0.01, 20.0))
def test_ca1_modulus(t):
    assert abs(stable_cf(StableLaw(1.0, CA1), t)) == pytest.approx(math.exp(-math.pi * t / 2), rel=1e-13)


@given(st.floats(0.05, 0.95).filter(lambda k: abs(k - 0.5) > 1e-9) | st.floats(1.05, 1.95))
def test_euler_reflection(kappa):
    assert abs(euler_reflection_residual(kappa)) < 1e-12


@pytest.mark.parametrize("law", [StableLaw(1.5), StableLaw(1.0, CA1), StableLaw(1.3, "CA", 2.0, 1.0), StableLaw(0.7)])
def test_sampler_matches_cf(law):
    x = stable_sample(law, 200_000, 17)
    d = cf_distance(x, law)
    assert d.within_band and d.band == pytest.approx(4 / math.sqrt(200_000))


def test_sampler_is_right_skewed():
    x = stable_sample(StableLaw(1.5), 200_000, 3)
    assert np.mean(x > 10) > 20 * np.mean(x < -10)
    assert np.mean(x <= 0) == pytest.approx(1 / 1.5, abs=0.005)      # positivity parameter 1 - 1/kappa
    with pytest.raises(ValueError):
        stable_sample(StableLaw(1.5), 0, 0)


@pytest.mark.parametrize("law", [StableLaw(1.5), StableLaw(1.0, CA1), StableLaw(1.3, "CA", 2.0, 1.0)])
def test_cdf_against_scipy(law):
    sigma, beta, mu = law.s1_parameters()
    levy_stable.parameterization = "S1"
    x = np.array([-2.0, 0.0, 1.0, 5.0])
    assert np.allclose(stable_cdf(law, x), levy_stable.cdf(x, law.index, beta, loc=mu, scale=sigma), atol=1e-6)
    assert stable_cdf(StableLaw(1.5), 0.0) == pytest.approx(2 / 3, abs=1e-9)


def test_stability_under_sums():
    """The sum of two i.i.d. standard CA(1.5) draws is 2^{1/1.5} times one draw."""
    law = StableLaw(1.5)
    a = stable_sample(law, 200_000, 1) + stable_sample(law, 200_000, 2)
    assert cf_distance(a, law.scaled(2 ** (1 / 1.5))).within_band


def test_law_validation():
    for bad in (dict(index=2.0), dict(index=1.0), dict(index=1.5, form=CA1), dict(index=1.5, scale=0.0)):
        with pytest.raises(ValueError):
            StableLaw(**bad)
    assert StableLaw.standard(1.0).form == CA1


def test_cf_distance_edge_cases():
    x = stable_sample(StableLaw(1.5), 1000, 0)
    assert cf_distance(x, StableLaw(1.5), t_grid=[]).distance == 0.0
    with pytest.raises(ValueError):
        cf_distance(x[:50], StableLaw(1.5))


def test_merge_estimates():
    m = merge_estimates([Estimate(1.0, 0.1, "mc", 10), Estimate(2.0, 0.1, "mc", 10)])
    assert m.value == pytest.approx(1.5) and m.stderr == pytest.approx(0.1 / math.sqrt(2)) and m.samples == 20
    assert merge_estimates([Estimate(1.0, 0.1, "mc"), Estimate(3.0, 0.0, "exact")]).value == 3.0


def test_tail_plateau_on_pareto():
    x = np.random.default_rng(0).pareto(1.5, 2_000_000) + 1.0      # P(X > t) = t^{-1.5}
    tp = tail_plateau(x, 1.5)
    assert tp.plateau == pytest.approx(1.0, abs=4 * tp.stderr)
    assert tp.flatness < 0.2 and tp.exceedances.min() >= 500
    assert tp.window[1] == pytest.approx(10 * tp.window[0])
    with pytest.raises(ValueError):
        tail_plateau(x[:100], 1.5)


def test_c_k_variants(beta_3_15, beta_2_1):
    v = beta_c_k_variants(beta_3_15)
    assert v["beta_closed_form"] == pytest.approx(1 / (1.5 * special.beta(1.5, 1.5)))
    assert v["scale_matched"] == pytest.approx(1 / (1.5 * special.beta(3.0, 1.5)))
    goldie = estimate_c_k(beta_2_1, "goldie_k1")
    assert goldie.value == pytest.approx(1.0, rel=1e-10) and goldie.stderr == 0
    assert estimate_c_k(beta_2_1).value == pytest.approx(1.0, rel=1e-12)   # 1 / B(1, 1)
    with pytest.raises(MethodUnavailable):
        estimate_c_k(beta_3_15, "goldie_k1")
    with pytest.raises(MethodUnavailable):
        estimate_c_k(beta_3_15, "nonsense")
    with pytest.raises(MethodUnavailable):
        beta_c_k_variants(EnvironmentModel.discrete([0.8, 0.6, 0.3], [0.4, 0.3, 0.3]))


def test_c_k_monte_carlo_agrees_with_closed_form(beta_3_15):
    closed = estimate_c_k(beta_3_15).value
    implicit = estimate_c_k(beta_3_15, "goldie_implicit", effort=400_000, rng=3)
    assert abs(implicit.value - closed) < 4 * implicit.stderr + 0.02 * closed


def test_renewal_series_mean(beta_3_15):
    r = sample_renewal_series(beta_3_15, 200_000, 5)
    # E[R] = E rho / (1 - E rho) with E rho = 0.75
    assert r.mean() == pytest.approx(3.0, rel=0.05)
    assert (r >= 0).all()


def test_chained_constants(beta_28_12):
    c = compute_constants(beta_28_12, effort=200_000, seed=1)
    k = c.kappa
    assert c.c_u.value == pytest.approx(k * c.rho_log_moment * c.mean_e1.value * c.c_k.value ** 2, rel=1e-12)
    assert c.c_t.value / c.c_u.value == pytest.approx(2 ** k * special.gamma(k + 1), rel=1e-12)
    assert c.stable_scale == pytest.approx(stable_scale(k, c.c_k.value, c.rho_log_moment))
    assert c.variants["beta_closed_form_scale"] == pytest.approx(beta_closed_form_scale(beta_28_12))
    assert c.v == pytest.approx((1 - 1.2 / 1.8) / (1 + 1.2 / 1.8))


def test_prediction_kappa_one(beta_2_1):
    p = limit_prediction(beta_2_1, 1000)
    assert p.centering == pytest.approx(2.0 * 1000 * math.log(1000))
    assert p.law.shift == pytest.approx(2.0 * (1 - EULER_GAMMA)) and p.low_confidence_shift
    assert p.normalize([p.centering])[0] == 0.0


def test_prediction_subcritical_is_experimental():
    model = EnvironmentModel.beta(2.5, 2.0)
    p = limit_prediction(model, 1000, effort=50_000)
    assert p.experimental and p.centering == 0.0 and p.normalization == pytest.approx(1000 ** 2)
