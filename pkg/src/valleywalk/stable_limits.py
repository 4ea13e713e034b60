"""Completely asymmetric stable laws and the limit constants.

Constants come with a standard error and a provenance tag.  The chained
constants C_U and C_T are always assembled from their components, never fitted.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from .env_model import EnvironmentModel, beta_k1_closed_form_moment, rho_log_moment, speed
from .errors import MethodUnavailable
from .potential import ExcursionStream
from .rng import CONSTANTS, STABLE, as_generator, stream

CA = "CA"
CA1 = "CA1"
EULER_GAMMA = float(np.euler_gamma)
CLOSED_FORM = "closed-form"
MONTE_CARLO = "monte-carlo"
HYBRID = "hybrid"

_CF_ENVELOPE = 1e-10
_R_CUTOFF = math.log(1e-12) - 10.0


# -- stable laws ----------------------------------------------------------------------
@dataclass(frozen=True)
class StableLaw:
    """``shift + scale * S`` with S completely asymmetric (totally skewed to the right).

    index in (1,2): E e^{itS} = exp((-it)^index), zero mean.
    index in (0,1): E e^{itS} = exp(-(-it)^index), supported on [0, inf) (experimental).
    index 1 (form CA1): E e^{itS} = exp(-pi|t|/2 - i t log|t|).
    """
    index: float
    form: str = CA
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if not 0 < self.index < 2:
            raise ValueError("stability index must lie in (0,2)")
        if self.form == CA1 and self.index != 1:
            raise ValueError("form CA1 needs index 1")
        if self.form == CA and self.index == 1:
            raise ValueError("index 1 uses form CA1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def standard(cls, index: float) -> "StableLaw":
        return cls(1.0, CA1) if index == 1 else cls(float(index), CA)

    def scaled(self, factor: float, shift: float = 0.0) -> "StableLaw":
        """Law of ``shift + factor * X``."""
        return StableLaw(self.index, self.form, self.scale * factor, shift + factor * self.shift)

    def s1_parameters(self) -> tuple[float, float, float]:
        """(sigma, beta, mu) of the standard S1 parametrisation of this law."""
        a = self.index
        if self.form == CA1:
            sigma = self.scale * math.pi / 2
            return sigma, 1.0, self.shift - self.scale * math.log(self.scale)
        c = -math.cos(math.pi * a / 2) if a > 1 else math.cos(math.pi * a / 2)
        return self.scale * c ** (1 / a), 1.0, self.shift


def _standard_cf(index: float, form: str, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.ones(t.shape, dtype=complex)
    nz = t != 0
    tt = t[nz]
    if form == CA1:
        out[nz] = np.exp(-np.pi / 2 * np.abs(tt) - 1j * tt * np.log(np.abs(tt)))
    elif index > 1:
        out[nz] = np.exp((-1j * tt) ** index)
    else:
        out[nz] = np.exp(-((-1j * tt) ** index))
    return out


def stable_cf(law: StableLaw, t):
    """Characteristic function of ``law`` at t (scalar or array)."""
    arr = np.asarray(t, dtype=float)
    val = np.exp(1j * arr * law.shift) * _standard_cf(law.index, law.form, law.scale * arr)
    return complex(val) if np.ndim(t) == 0 else val


def stable_sample(law: StableLaw, count: int, rng) -> np.ndarray:
    """Chambers-Mallows-Stuck draws."""
    if count < 1:
        raise ValueError("count must be at least 1")
    gen = as_generator(rng, STABLE)
    v = math.pi * (gen.random(count) - 0.5)
    w = gen.standard_exponential(count)
    sigma, beta, mu = law.s1_parameters()
    a = law.index
    if law.form == CA1:
        half = math.pi / 2
        x = (1 / half) * ((half + beta * v) * np.tan(v) - beta * np.log(half * w * np.cos(v) / (half + beta * v)))
        return sigma * x + (2 / math.pi) * beta * sigma * math.log(sigma) + mu
    tan = math.tan(math.pi * a / 2)
    b = math.atan(beta * tan) / a
    s = (1 + beta * beta * tan * tan) ** (1 / (2 * a))
    x = s * np.sin(a * (v + b)) / np.cos(v) ** (1 / a) * (np.cos(v - a * (v + b)) / w) ** ((1 - a) / a)
    return sigma * x + mu


def _cf_cutoff(law: StableLaw) -> float:
    """t beyond which |cf| < 1e-10."""
    sigma, _, _ = law.s1_parameters()
    return (math.log(1 / _CF_ENVELOPE)) ** (1 / law.index) / sigma


def _right_tail_constant(law: StableLaw) -> float:
    """P(X > x) ~ c x^{-index}."""
    sigma, beta, _ = law.s1_parameters()
    a = law.index
    if a == 1:
        ca = 2 / math.pi
    else:
        ca = (1 - a) / (special.gamma(2 - a) * math.cos(math.pi * a / 2))
    return ca * (1 + beta) / 2 * sigma ** a


def stable_cdf(law: StableLaw, x, tail_splice: Optional[float] = None):
    """CDF by Gil-Pelaez inversion, spliced with the right-tail asymptote far out.

    Beyond ``tail_splice`` (standardized units, default 40) the power-law
    asymptote replaces the inversion on the right; for index < 1 the CDF is
    0 on the negative half-line.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    z = (xs - law.shift) / law.scale
    std = StableLaw.standard(law.index)
    top = _cf_cutoff(std)
    c_tail = _right_tail_constant(std)

    def inversion(y: float) -> float:
        def integrand(t):
            if t == 0.0:
                return 0.0
            return (np.exp(-1j * t * y) * _standard_cf(std.index, std.form, np.array([t]))[0]).imag / t
        pts = [p for p in (1.0 / max(abs(y), 1e-3),) if 0 < p < top]
        val, _ = integrate.quad(integrand, 0.0, top, limit=2000, points=pts or None, epsabs=1e-12, epsrel=1e-10)
        return 0.5 - val / math.pi

    splice = 40.0 if tail_splice is None else tail_splice
    out = np.empty(z.size)
    for k, y in enumerate(z):
        if law.index < 1 and y <= 0:
            out[k] = 0.0
        elif y > splice:
            out[k] = 1.0 - c_tail * y ** (-law.index)
        else:
            out[k] = min(1.0, max(0.0, inversion(float(y))))
    return out if np.ndim(x) else float(out[0])


@dataclass(frozen=True)
class CFDistance:
    distance: float
    band: float          # 4 / sqrt(M), the null band for the empirical CF
    samples: int

    @property
    def within_band(self) -> bool:
        return self.distance < self.band


def empirical_cf(samples, t_grid) -> np.ndarray:
    s = np.asarray(samples, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    out = np.empty(t.size, dtype=complex)
    for k, tk in enumerate(t):
        out[k] = np.mean(np.exp(1j * tk * s))
    return out


def default_grid() -> np.ndarray:
    return np.linspace(-2.0, 2.0, 41)


def cf_distance(samples, law: StableLaw, t_grid=None) -> CFDistance:
    """sup over the grid of |empirical CF - law CF|."""
    s = np.asarray(samples, dtype=float)
    if s.size < 100:
        raise ValueError("cf_distance needs at least 100 samples")
    t = default_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    band = 4.0 / math.sqrt(s.size)
    if t.size == 0:
        return CFDistance(0.0, band, int(s.size))
    d = float(np.max(np.abs(empirical_cf(s, t) - stable_cf(law, t))))
    return CFDistance(d, band, int(s.size))


def ks_distance(samples, law: StableLaw, points: int = 400) -> float:
    """Kolmogorov distance evaluated at ``points`` sample quantiles (both one-sided limits)."""
    s = np.sort(np.asarray(samples, dtype=float))
    m = s.size
    idx = np.unique(np.linspace(0, m - 1, min(points, m)).astype(int))
    f = stable_cdf(law, s[idx])
    upper = (idx + 1) / m
    lower = idx / m
    return float(max(np.max(np.abs(upper - f)), np.max(np.abs(f - lower))))


def euler_reflection_residual(kappa: float) -> float:
    """Gamma(1+k) Gamma(1-k) sin(pi k) / (pi k) - 1."""
    return float(special.gamma(1 + kappa) * special.gamma(1 - kappa) * math.sin(math.pi * kappa)
                 / (math.pi * kappa) - 1.0)


# -- estimates -------------------------------------------------------------------------
@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    provenance: str
    samples: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def merge_estimates(parts: Sequence[Estimate]) -> Estimate:
    """Inverse-variance weighting; exact parts dominate."""
    parts = list(parts)
    exact = [p for p in parts if p.stderr == 0]
    if exact:
        return exact[0]
    w = np.array([1 / p.stderr ** 2 for p in parts])
    v = np.array([p.value for p in parts])
    return Estimate(float(np.sum(w * v) / w.sum()), float(1 / math.sqrt(w.sum())), parts[0].provenance,
                    sum(p.samples for p in parts))


# -- Kesten's renewal series -----------------------------------------------------------
def sample_renewal_series(model: EnvironmentModel, count: int, rng) -> np.ndarray:
    """R = sum_{k>=0} rho_0 ... rho_k, each sample run until its next term is below
    e^{-10} * 1e-12 * R (a further climb of 10 in log scale would be needed to matter)."""
    from .env_model import sample_omega_block
    from .potential import log_rho

    gen = as_generator(rng, CONSTANTS)
    log_prod = np.zeros(count)
    total = np.zeros(count)
    live = np.arange(count)
    while live.size:
        log_prod[live] += log_rho(sample_omega_block(model, live.size, gen))
        total[live] += np.exp(log_prod[live])
        done = log_prod[live] - np.log(total[live]) < _R_CUTOFF
        live = live[~done]
    return total


@dataclass(frozen=True)
class TailPlateau:
    plateau: float
    stderr: float
    flatness: float          # max |t^k P(X>t) / plateau - 1| over the window
    window: tuple
    points: np.ndarray
    values: np.ndarray
    exceedances: np.ndarray


def tail_plateau(samples, kappa: float, min_exceedances: int = 500, npoints: int = 9,
                 weights=None) -> TailPlateau:
    """Plateau of t^kappa P(X > t) over the top usable decade [t_max/10, t_max].

    t_max is the largest t with at least ``min_exceedances`` samples above it.
    """
    x = np.asarray(samples, dtype=float)
    order = np.argsort(x)
    xs = x[order]
    if weights is None:
        w = np.ones(xs.size)
    else:
        w = np.asarray(weights, dtype=float)[order]
    m = xs.size
    if m <= min_exceedances:
        raise ValueError("too few samples for a tail plateau")
    t_max = xs[m - min_exceedances - 1]
    pts = np.geomspace(t_max / 10, t_max, npoints)
    cum_w = np.concatenate((np.cumsum(w[::-1])[::-1], [0.0]))
    cum_w2 = np.concatenate((np.cumsum((w * w)[::-1])[::-1], [0.0]))
    total = w.sum()
    pos = np.searchsorted(xs, pts, side="right")
    surv = cum_w[pos] / total
    var = (cum_w2[pos] / total ** 2 - surv ** 2 / m)
    vals = pts ** kappa * surv
    errs = pts ** kappa * np.sqrt(np.maximum(var, 0.0))
    plateau = float(vals.mean())
    # neighbouring points share exceedances; the mean error is a conservative stderr
    stderr = float(errs.mean())
    flat = float(np.max(np.abs(vals / plateau - 1.0)))
    return TailPlateau(plateau, stderr, flat, (float(pts[0]), float(pts[-1])), pts, vals, m - pos)


# -- C_K --------------------------------------------------------------------------------
GOLDIE_K1 = "goldie_k1"
TAIL_REGRESSION = "tail_regression"
BETA_CLOSED_FORM = "beta_closed_form"
GOLDIE_IMPLICIT = "goldie_implicit"


def beta_c_k_variants(model: EnvironmentModel) -> dict:
    """Closed forms for Beta environments: the adopted one and the scale-matched variant."""
    if model.family != "beta":
        raise MethodUnavailable("closed form needs a Beta environment")
    a, b = model.params
    k = model.kappa
    return {"beta_closed_form": 1.0 / (k * special.beta(a - b, b)),
            "scale_matched": 1.0 / (k * special.beta(a, b))}


def estimate_c_k(model: EnvironmentModel, method: str = BETA_CLOSED_FORM, effort: int = 2_000_000,
                 rng=0) -> Estimate:
    if method == GOLDIE_K1:
        if abs(model.kappa - 1.0) > 1e-6:
            raise MethodUnavailable("goldie_k1 needs kappa = 1")
        return Estimate(1.0 / rho_log_moment(model, 1.0), 0.0, CLOSED_FORM)
    if method == BETA_CLOSED_FORM:
        return Estimate(beta_c_k_variants(model)["beta_closed_form"], 0.0, CLOSED_FORM)
    if method == GOLDIE_IMPLICIT:
        r = sample_renewal_series(model, int(effort), rng)
        k = model.kappa
        g = np.exp(k * np.log1p(r)) - np.exp(k * np.log(r))
        denom = k * rho_log_moment(model, k)
        return Estimate(float(g.mean() / denom), float(g.std(ddof=1) / math.sqrt(g.size) / denom), MONTE_CARLO,
                        int(effort))
    if method == TAIL_REGRESSION:
        r = sample_renewal_series(model, int(effort), rng)
        tp = tail_plateau(r, model.kappa)
        return Estimate(tp.plateau, tp.stderr, MONTE_CARLO, int(effort))
    raise MethodUnavailable("unknown C_K method %r" % method)


def default_c_k_method(model: EnvironmentModel) -> str:
    if model.family == "beta":
        return BETA_CLOSED_FORM
    if abs(model.kappa - 1.0) <= 1e-6:
        return GOLDIE_K1
    return TAIL_REGRESSION


# -- constants ---------------------------------------------------------------------------
@dataclass
class LimitConstants:
    kappa: float
    c_i: Estimate
    c_f: Estimate
    c_k: Estimate
    c_u: Estimate
    c_t: Estimate
    v: float
    stable_scale: float
    centering: str
    rho_log_moment: float              # E[rho^kappa log rho]
    mean_e1: Estimate
    exp_kappa_v: Estimate              # E[exp(kappa V(e_1))]
    variants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.to_dict() if isinstance(v, Estimate) else v
        return out


def stable_scale(kappa: float, c_k: float, rho_log: float) -> float:
    """2 (-pi kappa^2 / sin(pi kappa) C_K^2 E[rho^kappa log rho])^{1/kappa} for kappa in (1,2)."""
    if not 1 < kappa < 2:
        raise ValueError("the stable scale formula needs 1 < kappa < 2")
    return 2.0 * (-math.pi * kappa ** 2 / math.sin(math.pi * kappa) * c_k ** 2 * rho_log) ** (1 / kappa)


def beta_closed_form_scale(model: EnvironmentModel) -> float:
    """Closed-form Beta scale 2(-pi/sin(pi k) (Psi(a)-Psi(b)) / B(a,b)^2)^{1/k}."""
    if model.family != "beta":
        raise MethodUnavailable("closed form needs a Beta environment")
    a, b = model.params
    k = a - b
    return 2.0 * (-math.pi / math.sin(math.pi * k) * (special.digamma(a) - special.digamma(b))
                  / special.beta(a, b) ** 2) ** (1 / k)


def compute_constants(model: EnvironmentModel, effort: int = 1_000_000, rng=None, seed: int = 0,
                      c_k_method: Optional[str] = None, c_k_effort: int = 2_000_000) -> LimitConstants:
    """All limit constants; excursion moments by Monte Carlo over ``effort`` excursions."""
    k = model.kappa
    gen = as_generator(rng if rng is not None else stream(seed, CONSTANTS, 0), CONSTANTS)
    ex = ExcursionStream(model, gen, block=1 << 18).take(int(effort))
    m = len(ex)
    ekv = np.exp(-k * ex.drop)
    e1 = ex.lengths.astype(float)
    mean_ekv, mean_e1 = float(ekv.mean()), float(e1.mean())
    cov = np.cov(np.vstack((ekv, e1))) / m
    rho_log = rho_log_moment(model, k)
    one_minus = 1.0 - mean_ekv

    c_i = one_minus ** 2 / (k * rho_log * mean_e1)
    grad_i = np.array([-2 * one_minus / (k * rho_log * mean_e1), -c_i / mean_e1])
    c_f = one_minus / (k * rho_log * mean_e1)
    grad_f = np.array([-1 / (k * rho_log * mean_e1), -c_f / mean_e1])
    se_i = float(math.sqrt(max(grad_i @ cov @ grad_i, 0.0)))
    se_f = float(math.sqrt(max(grad_f @ cov @ grad_f, 0.0)))

    method = c_k_method or default_c_k_method(model)
    c_k = estimate_c_k(model, method, c_k_effort, stream(seed, CONSTANTS, 1))
    factor_u = k * rho_log
    c_u = factor_u * mean_e1 * c_k.value ** 2
    rel_u = math.hypot(math.sqrt(cov[1, 1]) / mean_e1, 2 * c_k.stderr / c_k.value if c_k.value else 0.0)
    prov = HYBRID if c_k.provenance == CLOSED_FORM else MONTE_CARLO
    c_t_factor = 2 ** k * special.gamma(k + 1)
    c_u_est = Estimate(c_u, c_u * rel_u, prov, m)
    c_t_est = Estimate(c_t_factor * c_u, c_t_factor * c_u * rel_u, prov, m)

    variants = {"c_k_method": method}
    if model.family == "beta":
        variants.update(beta_c_k_variants(model))
        a, b = model.params
        if 1 < k < 2:
            variants["beta_closed_form_scale"] = beta_closed_form_scale(model)
        if abs(k - 1) <= 1e-9:
            variants["beta_k1_closed_form_moment"] = beta_k1_closed_form_moment(b)
            variants["rho_log_moment_digamma"] = float(special.digamma(a) - special.digamma(b))
    if abs(k - 1) <= 1e-6:
        variants["goldie_k1"] = 1.0 / rho_log_moment(model, 1.0)

    if 1 < k < 2:
        scale = stable_scale(k, c_k.value, rho_log)
        centering = "n / v"
    elif abs(k - 1) <= 1e-9:
        scale = 2.0 / rho_log
        centering = "u_n * (2 / E[rho log rho]) * n log n, u_n = 1"
    else:
        scale = (special.gamma(1 - k) * c_t_factor * c_u / mean_e1) ** (1 / k)
        centering = "0 (experimental: kappa < 1)"
    return LimitConstants(k, Estimate(c_i, se_i, MONTE_CARLO, m), Estimate(c_f, se_f, MONTE_CARLO, m), c_k,
                          c_u_est, c_t_est, speed(model), float(scale), centering, float(rho_log),
                          Estimate(mean_e1, float(math.sqrt(cov[1, 1])), MONTE_CARLO, m),
                          Estimate(mean_ekv, float(math.sqrt(cov[0, 0])), MONTE_CARLO, m), variants)


@dataclass(frozen=True)
class Prediction:
    n: int
    centering: float
    normalization: float
    law: StableLaw
    experimental: bool = False
    low_confidence_shift: bool = False
    alternative_law: Optional[StableLaw] = None

    def normalize(self, tau) -> np.ndarray:
        return (np.asarray(tau, dtype=float) - self.centering) / self.normalization


def limit_prediction(model: EnvironmentModel, n: int, constants: Optional[LimitConstants] = None,
                       **kwargs) -> Prediction:
    """Centering, normalization and limit law for tau(n)."""
    k = model.kappa
    if abs(k - 1) <= 1e-9:
        rho_log = rho_log_moment(model, 1.0)
        scale = 2.0 / rho_log
        law = StableLaw(1.0, CA1, scale, scale * (1.0 - EULER_GAMMA))
        return Prediction(n, scale * n * math.log(n), float(n), law, low_confidence_shift=True,
                          alternative_law=StableLaw(1.0, CA1, scale, 0.0))
    constants = constants or compute_constants(model, **kwargs)
    if 1 < k < 2:
        alt = None
        if model.family == "beta":
            alt = StableLaw(k, CA, beta_closed_form_scale(model))
        return Prediction(n, n / constants.v, n ** (1 / k), StableLaw(k, CA, constants.stable_scale),
                          alternative_law=alt)
    return Prediction(n, 0.0, n ** (1 / k), StableLaw(k, CA, constants.stable_scale), experimental=True)
