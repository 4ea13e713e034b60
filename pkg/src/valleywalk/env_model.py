"""Environment laws for the site transition probabilities and their analytic scalars.

A model describes the law of a single ``omega`` (probability of stepping right).
The ratio ``rho = (1 - omega) / omega`` drives everything else; the index
``kappa`` solves ``E[rho^kappa] = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .errors import AssumptionViolation, ConfigError, Divergent, NoRoot
from .rng import as_generator

KAPPA_TOL = 1e-10
KAPPA_OVERRIDE_TOL = 1e-6
_LATTICE_DENOMINATOR = 64


@dataclass(frozen=True)
class EnvironmentModel:
    family: str
    params: tuple
    kappa: Optional[float] = None
    mean_rho: float = float("nan")
    rho_log_moment: Optional[float] = None
    strict: bool = True
    sampler: Optional[Callable] = field(default=None, compare=False, repr=False)
    moment_oracle: Optional[Callable] = field(default=None, compare=False, repr=False)

    # -- constructors ---------------------------------------------------------
    @classmethod
    def beta(cls, alpha: float, beta: float, kappa: Optional[float] = None, strict: bool = True):
        alpha, beta = float(alpha), float(beta)
        if alpha <= 0 or beta <= 0:
            raise ConfigError("Beta parameters must be positive")
        return _finalize(cls("beta", (alpha, beta), strict=strict), kappa)

    @classmethod
    def discrete(cls, atoms: Sequence[float], probs: Sequence[float],
                 kappa: Optional[float] = None, strict: bool = True):
        atoms = tuple(float(a) for a in atoms)
        probs = tuple(float(p) for p in probs)
        if len(atoms) != len(probs) or not atoms:
            raise ConfigError("atoms and probs must have equal nonzero length")
        if any(not 0.0 < a < 1.0 for a in atoms):
            raise ConfigError("every atom must lie strictly inside (0,1)")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError("probabilities must be nonnegative and sum to 1")
        return _finalize(cls("discrete", (atoms, probs), strict=strict), kappa)

    @classmethod
    def custom(cls, sampler: Callable, moment_oracle: Callable, kappa: Optional[float] = None,
               strict: bool = True, self_test_seed: int = 12345, self_test_size: int = 200_000):
        """``sampler(rng, n)`` returns n omegas; ``moment_oracle(s)`` returns E[rho^s]."""
        model = cls("custom", (), strict=strict, sampler=sampler, moment_oracle=moment_oracle)
        model = _finalize(model, kappa)
        _custom_self_test(model, self_test_seed, self_test_size)
        return model

    # -- helpers ---------------------------------------------------------------
    @property
    def label(self) -> str:
        if self.family == "beta":
            return "Beta(%g,%g)" % self.params
        if self.family == "discrete":
            return "Discrete{%s}" % ",".join("%g:%g" % ap for ap in zip(*self.params))
        return "Custom"

    def to_config(self) -> dict:
        if self.family == "beta":
            return {"family": "beta", "alpha": self.params[0], "beta": self.params[1]}
        if self.family == "discrete":
            return {"family": "discrete", "atoms": list(self.params[0]), "probs": list(self.params[1])}
        return {"family": "custom"}

    def tilted(self) -> "EnvironmentModel":
        """Law of omega reweighted by rho^kappa (a proper change of measure since E[rho^kappa]=1)."""
        if self.kappa is None:
            raise NoRoot("tilting needs kappa")
        if self.family == "beta":
            a, b = self.params
            return EnvironmentModel.beta(a - self.kappa, b + self.kappa, strict=False)
        if self.family == "discrete":
            atoms, probs = self.params
            w = np.array(probs) * np.array([((1 - a) / a) ** self.kappa for a in atoms])
            return EnvironmentModel.discrete(atoms, tuple(w / w.sum()), strict=False)
        raise AssumptionViolation("tilting is only available for Beta and Discrete models")


def _finalize(model: EnvironmentModel, kappa_override: Optional[float]) -> EnvironmentModel:
    mean_rho = moment_rho(model, 1.0) if _moment_finite(model, 1.0) else float("inf")
    object.__setattr__(model, "mean_rho", mean_rho)
    kappa = None
    try:
        if model.family == "beta":
            a, b = model.params
            kappa = a - b
            if not 0 < kappa < 2:
                raise NoRoot("kappa = alpha - beta = %g is outside (0,2)" % kappa)
        else:
            kappa = solve_kappa(model)
    except (NoRoot, Divergent):
        if model.strict:
            raise
        kappa = None
    if kappa_override is not None:
        if kappa is None or abs(float(kappa_override) - kappa) > KAPPA_OVERRIDE_TOL:
            raise ConfigError("kappa override %r inconsistent with model (solved %r)" % (kappa_override, kappa))
    object.__setattr__(model, "kappa", kappa)
    if kappa is not None:
        object.__setattr__(model, "rho_log_moment", rho_log_moment(model, kappa))
    if model.strict:
        if log_rho_mean(model) >= 0:
            raise AssumptionViolation("E[log rho] must be negative (transience to the right)")
        if abs(moment_rho(model, kappa) - 1.0) > 1e-8:
            raise AssumptionViolation("E[rho^kappa] deviates from 1")
        if model.family == "discrete" and is_lattice(model):
            raise AssumptionViolation("log rho is arithmetic (lattice) for this Discrete model")
    return model


def _moment_finite(model: EnvironmentModel, s: float) -> bool:
    if model.family == "beta":
        a, b = model.params
        return a - s > 0 and b + s > 0
    return True


# -- moments -------------------------------------------------------------------
def moment_rho(model: EnvironmentModel, s: float) -> float:
    """E[rho^s]."""
    s = float(s)
    if s == 0.0:
        return 1.0
    if model.family == "beta":
        a, b = model.params
        if not _moment_finite(model, s):
            raise Divergent("E[rho^%g] diverges for Beta(%g,%g)" % (s, a, b))
        return math.exp(special.betaln(a - s, b + s) - special.betaln(a, b))
    if model.family == "discrete":
        atoms, probs = model.params
        return float(sum(p * ((1 - w) / w) ** s for w, p in zip(atoms, probs)))
    val = float(model.moment_oracle(s))
    if not math.isfinite(val):
        raise Divergent("moment oracle returned %r at s=%g" % (val, s))
    return val


def rho_log_moment(model: EnvironmentModel, s: float) -> float:
    """E[rho^s log rho]."""
    s = float(s)
    if model.family == "beta":
        a, b = model.params
        if not _moment_finite(model, s):
            raise Divergent("E[rho^%g log rho] diverges" % s)
        # derivative of log B(a-s, b+s)
        return moment_rho(model, s) * (special.digamma(b + s) - special.digamma(a - s))
    if model.family == "discrete":
        atoms, probs = model.params
        return float(sum(p * ((1 - w) / w) ** s * math.log((1 - w) / w) for w, p in zip(atoms, probs)))
    h = 1e-5 * max(1.0, abs(s))
    return (moment_rho(model, s + h) - moment_rho(model, s - h)) / (2 * h)


def log_rho_mean(model: EnvironmentModel) -> float:
    """E[log rho]."""
    if model.family == "beta":
        a, b = model.params
        return float(special.digamma(b) - special.digamma(a))
    return rho_log_moment(model, 0.0)


def beta_quadrature_moment(alpha: float, beta: float, s: float, with_log: bool) -> float:
    """E[rho^s (log rho)^{0 or 1}] for Beta(alpha, beta) by algebraic-weight quadrature.

    Independent of the closed forms; used as a cross-check.
    """
    wvar = (alpha - s - 1.0, beta + s - 1.0)
    if wvar[0] <= -1 or wvar[1] <= -1:
        raise Divergent("integral diverges")
    norm = special.beta(alpha, beta)
    one = lambda w: 1.0
    if not with_log:
        val, _ = integrate.quad(one, 0.0, 1.0, weight="alg", wvar=wvar, limit=200)
        return val / norm
    # log rho = log(1-w) - log(w)
    log_b, _ = integrate.quad(one, 0.0, 1.0, weight="alg-logb", wvar=wvar, limit=200)
    log_a, _ = integrate.quad(one, 0.0, 1.0, weight="alg-loga", wvar=wvar, limit=200)
    return (log_b - log_a) / norm


def beta_k1_closed_form_moment(beta: float) -> float:
    """The alternative closed form B(beta,beta)/(2 beta) for E[rho log rho] at kappa=1 (reported only)."""
    return float(special.beta(beta, beta) / (2.0 * beta))


# -- kappa -----------------------------------------------------------------------
def solve_kappa(model: EnvironmentModel, tol: float = KAPPA_TOL) -> float:
    """Positive root of log E[rho^s] = 0 by bracketing then bisection."""
    lo = 1e-6
    hi = 2.0
    if model.family == "beta":
        hi = min(2.0, model.params[0] - 1e-6)

    def f(s):
        return math.log(moment_rho(model, s))

    try:
        f_lo, f_hi = f(lo), f(hi)
    except Divergent as exc:
        raise Divergent(str(exc)) from exc
    if f_lo >= 0:
        raise NoRoot("E[log rho] is not negative; no positive root")
    if not math.isfinite(f_hi):
        raise Divergent("moment diverges before crossing 1")
    if f_hi < 0:
        if model.family == "beta" and hi < 2.0:
            raise Divergent("moment integral diverges before crossing 1")
        raise NoRoot("E[rho^s] < 1 on the whole bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def speed(model: EnvironmentModel) -> float:
    """Asymptotic speed (1 - E[rho]) / (1 + E[rho]); exactly 0 at kappa = 1."""
    if model.kappa is not None and abs(model.kappa - 1.0) <= 1e-9:
        return 0.0
    m = model.mean_rho
    if not math.isfinite(m):
        return 0.0
    return (1.0 - m) / (1.0 + m)


def is_lattice(model: EnvironmentModel) -> bool:
    """True when all nonzero log rho atoms are rational multiples of one another."""
    atoms, probs = model.params
    logs = [math.log((1 - w) / w) for w, p in zip(atoms, probs) if p > 0]
    logs = [x for x in logs if abs(x) > 1e-15]
    if len(logs) <= 1:
        return True
    ref = logs[0]
    for x in logs[1:]:
        ratio = x / ref
        frac = Fraction(ratio).limit_denominator(_LATTICE_DENOMINATOR)
        if abs(ratio - float(frac)) > 1e-9:
            return False
    return True


# -- sampling ---------------------------------------------------------------------
_LOW = np.nextafter(0.0, 1.0)
_HIGH = np.nextafter(1.0, 0.0)


def sample_omega_block(model: EnvironmentModel, length: int, rng) -> np.ndarray:
    if length < 1:
        raise ValueError("length must be at least 1")
    gen = as_generator(rng)
    if model.family == "beta":
        out = gen.beta(model.params[0], model.params[1], size=length)
    elif model.family == "discrete":
        atoms, probs = model.params
        out = np.asarray(atoms)[gen.choice(len(atoms), size=length, p=probs)]
    else:
        out = np.asarray(model.sampler(gen, length), dtype=float)
    return np.clip(out, _LOW, _HIGH)


def _custom_self_test(model: EnvironmentModel, seed: int, size: int) -> None:
    draws = np.asarray(model.sampler(as_generator(seed), size), dtype=float)
    if np.any((draws <= 0) | (draws >= 1)):
        raise AssumptionViolation("custom sampler produced omega outside (0,1)")
    s = 0.5 * model.kappa if model.kappa else 0.5
    vals = ((1 - draws) / draws) ** s
    err = abs(vals.mean() - moment_rho(model, s))
    if err > 5 * vals.std(ddof=1) / math.sqrt(size):
        raise AssumptionViolation("custom sampler disagrees with its moment oracle (%.3g)" % err)


# -- config -------------------------------------------------------------------------
def model_from_config(block: dict) -> EnvironmentModel:
    family = str(block.get("family", "")).lower()
    override = block.get("kappa")
    if family == "beta":
        return EnvironmentModel.beta(block["alpha"], block["beta"], kappa=override)
    if family == "discrete":
        return EnvironmentModel.discrete(block["atoms"], block["probs"], kappa=override)
    raise ConfigError("unknown model family %r" % family)


def parse_model_string(text: str) -> dict:
    """``beta:3,1.5`` or ``discrete:0.7@0.5,0.4@0.5`` to a config block."""
    family, _, rest = text.partition(":")
    family = family.strip().lower()
    if family == "beta":
        a, b = (float(x) for x in rest.split(","))
        return {"family": "beta", "alpha": a, "beta": b}
    if family == "discrete":
        pairs = [p.split("@") for p in rest.split(",")]
        return {"family": "discrete", "atoms": [float(a) for a, _ in pairs], "probs": [float(p) for _, p in pairs]}
    raise ConfigError("cannot parse model %r" % text)
