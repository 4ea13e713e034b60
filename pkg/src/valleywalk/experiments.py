"""Config-driven experiment runners with reproducible, versioned outputs.

Every replicate and every sample batch draws from streams keyed by
(seed, replicate) or (seed, batch), so results do not depend on how work is
spread over processes.  Merged outcomes are sorted by replicate id before any
summary is computed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import kernels
from .env_model import (EnvironmentModel, beta_k1_closed_form_moment, model_from_config, parse_model_string,
                        rho_log_moment, sample_omega_block)
from .errors import ConfigError
from .potential import (ExcursionStream, build_potential, excursion_heights, log_r_minus_second, sample_z,
                        sample_tall_excursions)
from .quenched import consistency_check
from .rng import AUX, ENV, POOL, WALK, stream
from .stable_limits import (cf_distance, compute_constants, ks_distance, tail_plateau, limit_prediction)
from .valleys import critical_height, decompose, tail_frequency, valley_width
from .walker import (CONDITIONED, DEFAULT_BUDGET, IID, LazyEnvironment, UniformTape, crossing_time_batch,
                     iid_left_source, simulate_tau_n, simulate_valley_crossing_direct,
                     simulate_valley_crossing_fast)

SCHEMA_VERSION = 1
REPLICATE_SCHEMA = "valleywalk.replicates v%d" % SCHEMA_VERSION
SUMMARY_SCHEMA = "valleywalk.summary v%d" % SCHEMA_VERSION
RUN_SCHEMA = "valleywalk.run v%d" % SCHEMA_VERSION

SIMULATE = "simulate"
VALLEY_STATS = "valley_stats"
CONSTANTS = "constants"
LIMIT_CHECK = "limit_check"
IGLEHART_TAIL = "iglehart_tail"
Z_TAIL = "z_tail"
OCCUPATION_TAIL = "occupation_tail"
QUENCHED_GATE = "quenched_gate"
GOOD_ENV = "good_env"
INTERARRIVAL = "interarrival_diag"

KINDS = (SIMULATE, VALLEY_STATS, CONSTANTS, LIMIT_CHECK, IGLEHART_TAIL, Z_TAIL, OCCUPATION_TAIL,
         QUENCHED_GATE, GOOD_ENV, INTERARRIVAL)
_REPLICATED = (SIMULATE, VALLEY_STATS, LIMIT_CHECK, INTERARRIVAL)

DEFAULT_OPTIONS = {
    SIMULATE: {},
    VALLEY_STATS: {"gamma": 1.0, "A": 1.0, "q_samples": 2_000_000, "ratio_band": [0.9, 1.1],
                   "no_event_min": 0.95},
    CONSTANTS: {"effort": 1_000_000, "c_k_method": None, "c_k_effort": 2_000_000},
    LIMIT_CHECK: {"cf_max": 0.1, "kappa1_band": 0.3, "constants_effort": 1_000_000},
    IGLEHART_TAIL: {"excursions": 1_000_000, "slope_tol": 0.1, "min_exceedances": 500, "p_max": 1e-2,
                    "points": 20},
    Z_TAIL: {"samples": 1_000_000, "batch": 200_000, "flatness": 0.2, "c_u_tol": 0.25,
             "min_exceedances": 500, "constants_effort": 1_000_000},
    OCCUPATION_TAIL: {"samples": 1_000_000, "batch": 1_000_000, "band": [0.7, 1.3], "max_censored": 1e-3,
                      "left_excursions": 8, "min_exceedances": 500, "constants_effort": 1_000_000},
    QUENCHED_GATE: {"windows": 1000, "max_length": 200, "tolerance": 1e-8, "max_seconds": 10.0,
                    "valleys": 0, "valley_samples": 100_000, "min_height": 3.0, "ks_max": 0.02},
    GOOD_ENV: {"ladder": [1e4, 1e5, 1e6], "samples": 20_000, "C": 4.0, "alpha": None, "omega1_max": 1e-3,
               "left_sites": 4096},
    INTERARRIVAL: {},
}

# default left-environment law per experiment kind
_DEFAULT_ENVIRONMENT = {OCCUPATION_TAIL: CONDITIONED, Z_TAIL: CONDITIONED, GOOD_ENV: IID,
                        INTERARRIVAL: CONDITIONED}


# -- configuration ---------------------------------------------------------------------------
@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    model: dict
    n: tuple = ()
    replicates: int = 1
    budget: int = DEFAULT_BUDGET
    fast: bool = True
    environment: Optional[str] = None
    workers: int = 1
    out: Optional[str] = None
    options: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: dict, **overrides) -> "ExperimentConfig":
        data = dict(data)
        data.update({k: v for k, v in overrides.items() if v is not None})
        kind = data.pop("kind", None) or data.pop("experiment", None)
        if kind is None:
            raise ConfigError("config needs an experiment kind")
        kind = str(kind).replace("-", "_")
        if kind not in KINDS:
            raise ConfigError("unknown experiment kind %r" % kind)
        if data.get("seed") is None:
            raise ConfigError("seed is mandatory")
        seed = data.pop("seed")
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        model = data.pop("model", None)
        if isinstance(model, str):
            model = parse_model_string(model)
        if not isinstance(model, dict):
            raise ConfigError("config needs a model block")
        n = data.pop("n", ())
        n = tuple(int(x) for x in (n if isinstance(n, (list, tuple)) else [n]))
        known = {"replicates", "budget", "fast", "environment", "workers", "out"}
        core = {k: data.pop(k) for k in list(data) if k in known}
        options = dict(DEFAULT_OPTIONS[kind])
        options.update(data.pop("options", {}) or {})
        options.update(data)                       # remaining top-level keys are options
        cfg = cls(kind, int(seed), dict(model), n, options=options, **core)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.kind in _REPLICATED and int(self.replicates) < 1:
            raise ConfigError("replicates must be at least 1")
        if self.kind in (SIMULATE, VALLEY_STATS, LIMIT_CHECK, INTERARRIVAL) and not self.n:
            raise ConfigError("%s needs at least one n" % self.kind)
        if any(x < 1 for x in self.n):
            raise ConfigError("n values must be positive")
        if int(self.budget) < 1:
            raise ConfigError("budget must be positive")
        if int(self.workers) < 1:
            raise ConfigError("workers must be positive")
        if self.environment not in (None, IID, CONDITIONED):
            raise ConfigError("environment must be 'iid' or 'conditioned'")
        if self.kind == GOOD_ENV and not self.options.get("ladder"):
            raise ConfigError("good_env needs a nonempty t ladder")
        unknown = set(self.options) - set(DEFAULT_OPTIONS[self.kind])
        if unknown:
            raise ConfigError("unknown options for %s: %s" % (self.kind, ", ".join(sorted(unknown))))
        self.environment_model()                   # family, parameters, kappa override

    def environment_model(self) -> EnvironmentModel:
        return model_from_config(self.model)

    @property
    def left_environment(self) -> str:
        return self.environment or _DEFAULT_ENVIRONMENT.get(self.kind, IID)

    def resolved(self) -> dict:
        model = self.environment_model()
        block = model.to_config()
        block["kappa"] = model.kappa
        return {"kind": self.kind, "seed": self.seed, "model": block, "n": list(self.n),
                "replicates": int(self.replicates), "budget": int(self.budget), "fast": bool(self.fast),
                "environment": self.left_environment, "options": self.options,
                "workers": int(self.workers), "backend": kernels.BACKEND}

    def digest(self) -> str:
        """sha256 of the resolved config, ignoring fields that cannot change results."""
        body = {k: v for k, v in self.resolved().items() if k not in ("workers", "backend")}
        return hashlib.sha256(json.dumps(body, sort_keys=True, default=jsonable).encode()).hexdigest()


def load_config(path, **overrides) -> ExperimentConfig:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        import yaml
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return ExperimentConfig.from_mapping(data, **overrides)


# -- records -------------------------------------------------------------------------------
@dataclass(frozen=True)
class Metric:
    name: str
    estimate: float
    stderr: Optional[float]          # None marks an exact value
    samples: int
    censored: int = 0

    @property
    def exact(self) -> bool:
        return self.stderr is None


@dataclass(frozen=True)
class Gate:
    name: str
    value: float
    bound: str
    passed: bool


@dataclass
class RunRecord:
    kind: str
    config: dict
    digest: str
    replicates: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    censored: int = 0
    wall_time: float = 0.0
    backend: str = kernels.BACKEND
    tables: dict = field(default_factory=dict)    # extra CSV tables (name -> rows)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)

    def metric(self, name: str) -> Metric:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def gate(self, name: str) -> Gate:
        for g in self.gates:
            if g.name == name:
                return g
        raise KeyError(name)

    def summary(self) -> dict:
        return {"schema": RUN_SCHEMA, "kind": self.kind, "digest": self.digest, "config": self.config,
                "passed": self.passed, "censored": self.censored, "wall_time": self.wall_time,
                "backend": self.backend, "replicates": len(self.replicates),
                "metrics": [dict(asdict(m), exact=m.exact) for m in self.metrics],
                "gates": [asdict(g) for g in self.gates], "notes": self.notes}

    def write(self, out_dir, stem: Optional[str] = None) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        paths = {}
        if self.replicates:
            p = out / (stem + ".jsonl")
            with open(p, "w") as fh:
                fh.write(json.dumps({"schema": REPLICATE_SCHEMA, "digest": self.digest, "config": self.config},
                                    default=jsonable) + "\n")
                for rec in self.replicates:
                    fh.write(json.dumps(rec, default=jsonable) + "\n")
            paths["replicates"] = p
        p = out / (stem + "_summary.csv")
        with open(p, "w", newline="") as fh:
            fh.write("# schema: %s digest=%s\n" % (SUMMARY_SCHEMA, self.digest))
            w = csv.writer(fh)
            w.writerow(["metric", "estimate", "stderr", "exact", "samples", "censored"])
            for m in self.metrics:
                w.writerow([m.name, repr(m.estimate), "" if m.stderr is None else repr(m.stderr), int(m.exact),
                            m.samples, m.censored])
        paths["summary_csv"] = p
        for name, rows in self.tables.items():
            p = out / ("%s_%s.csv" % (stem, name))
            with open(p, "w", newline="") as fh:
                fh.write("# schema: valleywalk.%s v%d digest=%s\n" % (name, SCHEMA_VERSION, self.digest))
                if rows:
                    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                    w.writeheader()
                    w.writerows(rows)
            paths[name] = p
        p = out / (stem + ".json")
        p.write_text(json.dumps(self.summary(), indent=2, default=jsonable) + "\n")
        paths["summary_json"] = p
        return paths


def jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError("not serializable: %r" % type(x))


def _record(cfg: ExperimentConfig) -> RunRecord:
    return RunRecord(cfg.kind, cfg.resolved(), cfg.digest())


def _mean_metric(name: str, values, censored: int = 0) -> Metric:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return Metric(name, float(v.mean()) if v.size else math.nan, se, int(v.size), censored)


def _median_metric(name: str, values, censored: int = 0) -> Metric:
    """Median with the order-statistic (binomial) standard error."""
    v = np.sort(np.asarray(values, dtype=float))
    m = v.size
    if m == 0:
        return Metric(name, math.nan, math.nan, 0, censored)
    half = max(1, int(math.ceil(math.sqrt(m) / 2)))
    lo, hi = v[max(0, m // 2 - half)], v[min(m - 1, m // 2 + half)]
    return Metric(name, float(np.median(v)), float(hi - lo) / 2, int(m), censored)


# -- parallel replicates ----------------------------------------------------------------------
def map_replicates(fn: Callable, tasks: Sequence, workers: int = 1, key: Callable = None) -> list:
    """Apply ``fn`` to every task, in-process or across ``workers`` processes, and sort the results."""
    if workers <= 1 or len(tasks) <= 1:
        results = [fn(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=int(workers)) as ex:
            futures = [ex.submit(fn, t) for t in tasks]
            results = [f.result() for f in futures]
    return sorted(results, key=key or (lambda r: (r["n"], r["replicate"])))


def _tau_task(task) -> dict:
    model, n, seed, rep, budget, fast, environment, target = task
    out = simulate_tau_n(model, n, seed, rep, budget=budget, fast=fast, environment=environment, target=target)
    return out.to_record()


def _tau_records(cfg: ExperimentConfig, model: EnvironmentModel, site_target: bool) -> list:
    tasks = [(model, n, cfg.seed, r, int(cfg.budget), bool(cfg.fast), cfg.left_environment,
              n if site_target else None) for n in cfg.n for r in range(int(cfg.replicates))]
    return map_replicates(_tau_task, tasks, int(cfg.workers))


def _by_n(records: list, n: int) -> list:
    return [r for r in records if r["n"] == n]


# -- simulate -----------------------------------------------------------------------------------
def run_simulate(cfg: ExperimentConfig) -> RunRecord:
    """Replicates of tau(e_n) for every n; no gates."""
    started = time.perf_counter()
    model = cfg.environment_model()
    rec = _record(cfg)
    rec.replicates = _tau_records(cfg, model, site_target=False)
    for n in cfg.n:
        rows = _by_n(rec.replicates, n)
        ok = [r for r in rows if not r["truncated"]]
        cens = len(rows) - len(ok)
        rec.metrics.append(_mean_metric("mean_tau[n=%d]" % n, [r["tau"] for r in ok], cens))
        rec.metrics.append(_median_metric("median_tau[n=%d]" % n, [r["tau"] for r in ok], cens))
        rec.metrics.append(_mean_metric("mean_k_deep[n=%d]" % n, [r["k_deep"] for r in rows]))
        rec.censored += cens
    rec.wall_time = time.perf_counter() - started
    return rec


# -- valley statistics ------------------------------------------------------------------------
def _valley_task(task) -> dict:
    model, n, seed, rep, gamma, A = task
    ex = ExcursionStream(model, stream(seed, ENV, rep, 0), block=1 << 14).take(n)
    dec = decompose(ex, n, gamma=gamma, A=A, kappa=model.kappa)
    return {"replicate": rep, "n": n, "k_n": dec.k_n, "no_event": dec.no_event, "h_n": dec.h_n,
            "d_n": dec.d_n_width, "valleys": dec.rows()}


def run_valley_stats(cfg: ExperimentConfig) -> RunRecord:
    """Deep-valley counts and the separation event NO(n) against n q_n."""
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    rec = _record(cfg)
    tasks = [(model, n, cfg.seed, r, float(opt["gamma"]), float(opt["A"]))
             for n in cfg.n for r in range(int(cfg.replicates))]
    rec.replicates = map_replicates(_valley_task, tasks, int(cfg.workers))
    rows = []
    lo, hi = opt["ratio_band"]
    for i, n in enumerate(cfg.n):
        reps = _by_n(rec.replicates, n)
        h_n = critical_height(n, model.kappa)
        q, q_se = tail_frequency(model, h_n, int(opt["q_samples"]), stream(cfg.seed, POOL, i))
        k = np.array([r["k_n"] for r in reps], dtype=float)
        k_mean = float(k.mean())
        k_se = float(k.std(ddof=1) / math.sqrt(k.size)) if k.size > 1 else math.nan
        ratio = k_mean / (n * q)
        ratio_se = ratio * math.hypot(k_se / k_mean if k_mean else math.nan, q_se / q)
        no_freq = float(np.mean([r["no_event"] for r in reps]))
        no_se = math.sqrt(no_freq * (1 - no_freq) / len(reps))
        rec.metrics += [Metric("k_n_mean[n=%d]" % n, k_mean, k_se, len(reps)),
                        Metric("q_n_hat[n=%d]" % n, q, q_se, int(opt["q_samples"])),
                        Metric("k_ratio[n=%d]" % n, ratio, ratio_se, len(reps)),
                        Metric("no_event_freq[n=%d]" % n, no_freq, no_se, len(reps)),
                        Metric("h_n[n=%d]" % n, h_n, None, 1),
                        Metric("d_n[n=%d]" % n, float(valley_width(n, model.kappa, opt["gamma"], opt["A"])), None, 1)]
        rec.gates += [Gate("k_ratio[n=%d]" % n, ratio, "in [%g, %g]" % (lo, hi), lo <= ratio <= hi),
                      Gate("no_event_freq[n=%d]" % n, no_freq, ">= %g" % opt["no_event_min"],
                           no_freq >= opt["no_event_min"])]
        for r in reps:
            for v in r["valleys"]:
                rows.append(dict(n=n, replicate=r["replicate"], **v))
    rec.tables["valleys"] = rows
    rec.wall_time = time.perf_counter() - started
    return rec


# -- constants and tails -------------------------------------------------------------------------
def run_constants(cfg: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    rec = _record(cfg)
    c = compute_constants(model, int(opt["effort"]), seed=cfg.seed, c_k_method=opt["c_k_method"],
                          c_k_effort=int(opt["c_k_effort"]))
    for name in ("c_i", "c_f", "c_k", "c_u", "c_t", "mean_e1", "exp_kappa_v"):
        e = getattr(c, name)
        rec.metrics.append(Metric(name, e.value, None if e.stderr == 0 else e.stderr, e.samples))
    rec.metrics += [Metric("kappa", c.kappa, None, 1), Metric("speed", c.v, None, 1),
                    Metric("rho_log_moment", c.rho_log_moment, None, 1),
                    Metric("scale", c.stable_scale, None, 1)]
    rec.tables["constants"] = [{"name": k, "value": v} for k, v in sorted(c.variants.items())]
    rec.notes.append("centering: " + c.centering)
    rec.wall_time = time.perf_counter() - started
    return rec


def iglehart_fit(heights, kappa: float, p_max: float = 1e-2, min_exceedances: int = 500,
                 points: int = 20) -> dict:
    """Least-squares slope of log P(H > h) on h over the window where P lies in
    [min_exceedances / N, p_max]."""
    h = np.sort(np.asarray(heights, dtype=float))
    m = h.size
    lo = h[int(math.floor(m * (1 - p_max)))]
    hi = h[m - min_exceedances - 1]
    if not hi > lo:
        raise ValueError("tail window is empty; increase the sample size")
    grid = np.linspace(lo, hi, int(points))
    surv = (m - np.searchsorted(h, grid, side="right")) / m
    fit = stats.linregress(grid, np.log(surv))
    return {"slope": float(fit.slope), "stderr": float(fit.stderr), "window": (float(lo), float(hi)),
            "intercept": float(fit.intercept), "points": int(points), "samples": int(m)}


def run_iglehart_tail(cfg: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    rec = _record(cfg)
    heights = excursion_heights(model, int(opt["excursions"]), stream(cfg.seed, POOL, 0))
    fit = iglehart_fit(heights, model.kappa, opt["p_max"], int(opt["min_exceedances"]), int(opt["points"]))
    rec.metrics += [Metric("slope", fit["slope"], fit["stderr"], fit["samples"]),
                    Metric("window_lo", fit["window"][0], None, fit["samples"]),
                    Metric("window_hi", fit["window"][1], None, fit["samples"])]
    dev = abs(fit["slope"] + model.kappa)
    rec.gates.append(Gate("slope", fit["slope"], "-kappa +/- %g" % opt["slope_tol"], dev <= opt["slope_tol"]))
    rec.wall_time = time.perf_counter() - started
    return rec


def _batches(total: int, batch: int) -> list:
    full, rest = divmod(int(total), int(batch))
    return [int(batch)] * full + ([rest] if rest else [])


def _z_task(task) -> np.ndarray:
    model, size, seed, b = task
    return sample_z(model, size, stream(seed, POOL, b)).log_z


def run_z_tail(cfg: ExperimentConfig) -> RunRecord:
    """Plateau of t^kappa P(Z > t) under the conditioned left law against C_U."""
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    rec = _record(cfg)
    sizes = _batches(opt["samples"], opt["batch"])
    tasks = [(model, s, cfg.seed, b) for b, s in enumerate(sizes)]
    parts = map_replicates(_z_task, tasks, int(cfg.workers), key=lambda _: 0)
    log_z = np.concatenate(parts)
    tp = tail_plateau(np.exp(np.minimum(log_z, 700.0)), model.kappa, int(opt["min_exceedances"]))
    c = compute_constants(model, int(opt["constants_effort"]), seed=cfg.seed)
    ratio = tp.plateau / c.c_u.value
    rec.metrics += [Metric("plateau", tp.plateau, tp.stderr, log_z.size),
                    Metric("flatness", tp.flatness, None, log_z.size),
                    Metric("c_u", c.c_u.value, c.c_u.stderr, c.c_u.samples),
                    Metric("plateau_over_c_u", ratio, ratio * math.hypot(tp.stderr / tp.plateau,
                                                                           c.c_u.stderr / c.c_u.value),
                           log_z.size)]
    rec.gates += [Gate("flatness", tp.flatness, "<= %g" % opt["flatness"], tp.flatness <= opt["flatness"]),
                  Gate("plateau_over_c_u", ratio, "within %g of 1" % opt["c_u_tol"],
                       abs(ratio - 1) <= opt["c_u_tol"])]
    rec.tables["tail"] = [{"t": float(t), "t_kappa_survival": float(v), "exceedances": int(e)}
                          for t, v, e in zip(tp.points, tp.values, tp.exceedances)]
    rec.wall_time = time.perf_counter() - started
    return rec


def _crossing_task(task) -> np.ndarray:
    model, size, seed, b, fast, budget, left, environment = task
    return crossing_time_batch(model, size, seed, b, fast=fast, budget=budget, left_excursions=left,
                               environment=environment).tau


def run_occupation_tail(cfg: ExperimentConfig) -> RunRecord:
    """Plateau of t^kappa P(tau(e_1) >= t) against C_T."""
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    rec = _record(cfg)
    sizes = _batches(opt["samples"], opt["batch"])
    tasks = [(model, s, cfg.seed, b, bool(cfg.fast), int(cfg.budget), int(opt["left_excursions"]),
              cfg.left_environment) for b, s in enumerate(sizes)]
    tau = np.concatenate(map_replicates(_crossing_task, tasks, int(cfg.workers), key=lambda _: 0))
    censored = int(np.sum(tau < 0))
    x = np.where(tau < 0, np.inf, tau.astype(float))      # truncated runs exceed every retained t
    # tau is integer valued: P(tau >= t) = P(tau > t - 1)
    tp = tail_plateau(x + 1.0, model.kappa, int(opt["min_exceedances"]))
    c = compute_constants(model, int(opt["constants_effort"]), seed=cfg.seed)
    ratio = tp.plateau / c.c_t.value
    grid = np.geomspace(1.0, tp.window[1], 64)
    surv = 1.0 - np.searchsorted(np.sort(x), grid, side="left") / x.size
    monotone = bool(np.all(np.diff(surv) <= 0))
    cens_frac = censored / tau.size
    lo, hi = opt["band"]
    rec.censored = censored
    rec.metrics += [Metric("plateau", tp.plateau, tp.stderr, tau.size, censored),
                    Metric("flatness", tp.flatness, None, tau.size, censored),
                    Metric("c_t", c.c_t.value, c.c_t.stderr, c.c_t.samples),
                    Metric("plateau_over_c_t", ratio, ratio * math.hypot(tp.stderr / tp.plateau,
                                                                           c.c_t.stderr / c.c_t.value),
                           tau.size, censored),
                    Metric("censored_fraction", cens_frac, None, tau.size, censored)]
    rec.gates += [Gate("plateau_over_c_t", ratio, "in [%g, %g]" % (lo, hi), lo <= ratio <= hi),
                  Gate("censored_fraction", cens_frac, "< %g" % opt["max_censored"], cens_frac < opt["max_censored"]),
                  Gate("survival_monotone", float(monotone), "== 1", monotone)]
    rec.tables["tail"] = [{"t": float(t), "t_kappa_survival": float(v), "exceedances": int(e)}
                          for t, v, e in zip(tp.points, tp.values, tp.exceedances)]
    rec.wall_time = time.perf_counter() - started
    return rec


# -- limit law --------------------------------------------------------------------------------------
def run_limit_check(cfg: ExperimentConfig) -> RunRecord:
    """tau(n) at the site n against the predicted limit law."""
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    k = model.kappa
    rec = _record(cfg)
    rec.replicates = _tau_records(cfg, model, site_target=True)
    critical = abs(k - 1) <= 1e-9
    constants = None if critical else compute_constants(model, int(opt["constants_effort"]), seed=cfg.seed)
    if k < 1:
        rec.notes.append("kappa < 1: centering and scale are experimental; no gate is applied")
    top = max(cfg.n)
    for n in cfg.n:
        rows = _by_n(rec.replicates, n)
        tau = np.array([r["tau"] for r in rows if not r["truncated"]], dtype=float)
        cens = len(rows) - tau.size
        rec.censored += cens
        pred = limit_prediction(model, n, constants)
        z = pred.normalize(tau)
        rec.metrics.append(_median_metric("median_normalized[n=%d]" % n, z, cens))
        if z.size >= 100:
            cf = cf_distance(z, pred.law)
            rec.metrics += [Metric("cf_distance[n=%d]" % n, cf.distance, cf.band / 4, cf.samples, cens),
                            Metric("ks_distance[n=%d]" % n, ks_distance(z, pred.law), None, z.size, cens)]
            if pred.alternative_law is not None:
                alt = cf_distance(z, pred.alternative_law)
                rec.metrics.append(Metric("cf_distance_alternative[n=%d]" % n, alt.distance, alt.band / 4,
                                          alt.samples, cens))
            if 1 < k < 2 and n == top:
                rec.gates.append(Gate("cf_distance[n=%d]" % n, cf.distance, "< %g" % opt["cf_max"],
                                      cf.distance < opt["cf_max"]))
        if critical:
            ratio = tau / (n * math.log(n))
            limit = 2.0 / rho_log_moment(model, 1.0)
            med = _median_metric("median_ratio[n=%d]" % n, ratio, cens)
            rel = med.estimate / limit
            rec.metrics += [med, Metric("ratio_limit", limit, None, 1),
                            Metric("median_ratio_over_limit[n=%d]" % n, rel, med.stderr / limit, tau.size, cens)]
            if model.family == "beta":
                alt = 2.0 / beta_k1_closed_form_moment(model.params[1])
                rec.metrics.append(Metric("ratio_limit_closed_form_variant", alt, None, 1))
            if n == top:
                band = opt["kappa1_band"]
                rec.gates.append(Gate("median_ratio_over_limit[n=%d]" % n, rel, "within %g of 1" % band,
                                      abs(rel - 1) <= band))
    rec.wall_time = time.perf_counter() - started
    return rec


# -- quenched gate ----------------------------------------------------------------------------------
def _h_transform_valley(model: EnvironmentModel, seed: int, index: int, min_height: float, samples: int,
                        budget: int) -> dict:
    """Direct and decomposition crossing times of one random valley of height >= ``min_height``."""
    ex_stream = ExcursionStream(model, stream(seed, ENV, index, 0), block=1 << 14)
    while True:
        batch = ex_stream.next_batch()
        tall = np.flatnonzero(batch.height >= min_height)
        if tall.size:
            j = int(tall[0])
            break
    right = batch.omega_of(j)
    left_src = iid_left_source(model, stream(seed, ENV, index, 1))
    w_left = left_src()
    omegas = np.concatenate((w_left, right))
    origin = w_left.size - 1
    env_a = LazyEnvironment(omegas.copy(), origin, left_src)
    env_b = LazyEnvironment(omegas.copy(), origin, iid_left_source(model, stream(seed, ENV, index, 1)))
    # both copies extend with the same left blocks, so they see the same environment
    fast = simulate_valley_crossing_fast(env_a, 0, right.size, samples, budget=budget,
                                         tape=UniformTape(stream(seed, WALK, index, 0)))
    direct = simulate_valley_crossing_direct(env_b, 0, right.size, samples, budget=budget,
                                             tape=UniformTape(stream(seed, WALK, index, 1)))
    ks = stats.ks_2samp(fast[fast >= 0], direct[direct >= 0])
    return {"valley": index, "height": float(batch.height[j]), "e1": int(right.size),
            "ks": float(ks.statistic), "p_value": float(ks.pvalue),
            "censored": int(np.sum(fast < 0) + np.sum(direct < 0)),
            "mean_fast": float(fast[fast >= 0].mean()), "mean_direct": float(direct[direct >= 0].mean())}


def run_quenched_gate(cfg: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    rec = _record(cfg)
    rep = consistency_check(model, int(opt["windows"]), int(opt["max_length"]), stream(cfg.seed, AUX, 0),
                            float(opt["tolerance"]))
    rec.metrics += [Metric("max_rel_exit", rep.max_rel_exit, None, rep.windows),
                    Metric("max_rel_mean", rep.max_rel_mean, None, rep.windows),
                    Metric("max_rel_variance", rep.max_rel_variance, None, rep.windows),
                    Metric("oracle_seconds", rep.seconds, None, rep.windows)]
    rec.gates += [Gate("oracle_max_rel", rep.max_rel, "<= %g" % rep.tolerance, rep.passed),
                  Gate("oracle_seconds", rep.seconds, "< %g" % opt["max_seconds"], rep.seconds < opt["max_seconds"])]
    if int(opt["valleys"]) > 0:
        rows = [_h_transform_valley(model, cfg.seed, i, float(opt["min_height"]), int(opt["valley_samples"]),
                                    int(cfg.budget)) for i in range(int(opt["valleys"]))]
        worst = max(r["ks"] for r in rows)
        rec.metrics.append(Metric("max_ks", worst, None, int(opt["valley_samples"]),
                                  sum(r["censored"] for r in rows)))
        rec.gates.append(Gate("h_transform_ks", worst, "< %g" % opt["ks_max"], worst < opt["ks_max"]))
        rec.tables["valleys"] = rows
    rec.wall_time = time.perf_counter() - started
    return rec


# -- good environments -------------------------------------------------------------------------------
def good_env_alpha(kappa: float) -> float:
    """Midpoint of the admissible interval (max(0, 1 - kappa), min(1, 2 - kappa))."""
    return 0.5 * (max(0.0, 1.0 - kappa) + min(1.0, 2.0 - kappa))


def _left_r_minus(model: EnvironmentModel, count: int, environment: str, sites: int, gen) -> np.ndarray:
    """log R^- for ``count`` independent left environments."""
    out = np.empty(count)
    if environment == CONDITIONED:
        from .potential import concatenate_left
        ex = ExcursionStream(model, gen, block=1 << 14)
        mean_drop = float(ex.take(1024).drop.mean())
        J = int(math.ceil(34.0 / max(mean_drop, 1e-3))) + 8
        for i in range(count):
            out[i] = log_r_minus_second(concatenate_left(ex.take(J)).path)
        return out
    for i in range(count):
        w = sample_omega_block(model, sites + 1, gen)
        out[i] = log_r_minus_second(build_potential(w, sites))
    return out


def run_good_env_diagnostic(cfg: ExperimentConfig) -> RunRecord:
    """Failure frequencies of the three good-environment events among excursions with H >= h_t."""
    started = time.perf_counter()
    model = cfg.environment_model()
    opt = cfg.options
    k = model.kappa
    alpha = float(opt["alpha"]) if opt["alpha"] is not None else good_env_alpha(k)
    if not max(0.0, 1 - k) < alpha < min(1.0, 2 - k):
        raise ConfigError("alpha must lie in (max(0,1-kappa), min(1,2-kappa))")
    ladder = sorted(float(t) for t in opt["ladder"])
    count = int(opt["samples"])
    rec = _record(cfg)
    log_r = _left_r_minus(model, count, cfg.left_environment, int(opt["left_sites"]), stream(cfg.seed, AUX, 1))
    rows = []
    for i, t in enumerate(ladder):
        lt = math.log(t)
        h_t = lt - math.log(lt)
        tall = sample_tall_excursions(model, h_t, count, stream(cfg.seed, POOL, i))
        w = tall.weights / tall.weights.sum()
        fails = {"omega1": tall.length > opt["C"] * lt,
                 "omega2": np.maximum(tall.max_drop_before_top, tall.max_rise_after_top) > alpha * lt}
        row = {"t": t, "h_t": h_t, "accepted": int(tall.height.size)}
        for name, f in fails.items():
            p = float(np.sum(w[f]))
            se = float(math.sqrt(np.sum(w ** 2 * (f - p) ** 2)))
            row[name], row[name + "_se"] = p, se
        f3 = log_r > 4 * math.log(lt) + alpha * lt
        p3 = float(f3.mean())
        row["omega3"], row["omega3_se"] = p3, math.sqrt(max(p3 * (1 - p3), 0.0) / count)
        rows.append(row)
        for name in ("omega1", "omega2", "omega3"):
            rec.metrics.append(Metric("%s_failure[t=%g]" % (name, t), row[name], row[name + "_se"],
                                      row["accepted"] if name != "omega3" else count))
    for name in ("omega1", "omega2", "omega3"):
        # nonincreasing up to two standard errors between consecutive rungs
        ok = all(b[name] <= a[name] + 2 * math.hypot(a[name + "_se"], b[name + "_se"])
                 for a, b in zip(rows, rows[1:]))
        rec.gates.append(Gate("%s_nonincreasing" % name, float(ok), "== 1", ok))
    top = rows[-1]
    rec.gates.append(Gate("omega1_failure[t=%g]" % top["t"], top["omega1"], "< %g" % opt["omega1_max"],
                          top["omega1"] < opt["omega1_max"]))
    rec.metrics.append(Metric("alpha", alpha, None, 1))
    rec.tables["ladder"] = rows
    rec.wall_time = time.perf_counter() - started
    return rec


# -- inter-arrival time -----------------------------------------------------------------------------
def run_interarrival_diag(cfg: ExperimentConfig) -> RunRecord:
    """Spread of (tau_IA - mean) / n^{1/kappa} across the n ladder."""
    started = time.perf_counter()
    model = cfg.environment_model()
    k = model.kappa
    if not 1 <= k < 2:
        raise ConfigError("interarrival diagnostic needs 1 <= kappa < 2")
    rec = _record(cfg)
    rec.replicates = _tau_records(cfg, model, site_target=False)
    iqrs = []
    sub_time = True
    no_valley = True
    for n in sorted(cfg.n):
        rows = [r for r in _by_n(rec.replicates, n) if not r["truncated"]]
        ia = np.array([r["tau_ia"] for r in rows], dtype=float)
        sub_time &= all(r["tau_ia"] <= r["tau"] for r in rows)
        no_valley &= all(r["tau_ia"] == r["tau"] for r in rows if r["k_deep"] == 0)
        z = (ia - ia.mean()) / n ** (1 / k)
        q75, q25 = np.percentile(z, [75, 25])
        iqrs.append(float(q75 - q25))
        rec.metrics.append(Metric("iqr[n=%d]" % n, iqrs[-1], None, ia.size))
        rec.censored += len(_by_n(rec.replicates, n)) - len(rows)
    decreasing = all(b < a for a, b in zip(iqrs, iqrs[1:]))
    rec.gates += [Gate("iqr_decreasing", float(decreasing), "== 1", decreasing),
                  Gate("tau_ia_subtime", float(sub_time), "== 1", sub_time),
                  Gate("tau_ia_without_valleys", float(no_valley), "== 1", no_valley)]
    rec.wall_time = time.perf_counter() - started
    return rec


RUNNERS = {SIMULATE: run_simulate, VALLEY_STATS: run_valley_stats, CONSTANTS: run_constants,
           LIMIT_CHECK: run_limit_check, IGLEHART_TAIL: run_iglehart_tail, Z_TAIL: run_z_tail,
           OCCUPATION_TAIL: run_occupation_tail, QUENCHED_GATE: run_quenched_gate,
           GOOD_ENV: run_good_env_diagnostic, INTERARRIVAL: run_interarrival_diag}


def run(cfg: ExperimentConfig) -> RunRecord:
    return RUNNERS[cfg.kind](cfg)
