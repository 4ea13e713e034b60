"""Potential landscapes, ladder epochs and excursion functionals.

The potential is ``V(0) = 0`` and ``V(x) - V(x-1) = log rho_x``.  All sums of
``exp(+-V)`` are taken in the log domain; public records carry log values next
to the (possibly overflowing) linear ones.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.special import logsumexp

from .env_model import EnvironmentModel, sample_omega_block
from .errors import InsufficientExcursions, WindowTooSmall
from .rng import as_generator

R_MINUS_RTOL = 1e-12
_DRIFT_WINDOW = 64


def log_rho(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    return np.log1p(-omega) - np.log(omega)


@dataclass(frozen=True)
class PotentialPath:
    """V on the sites ``origin_offset, ..., origin_offset + len(values) - 1``.

    ``omegas[i]`` is the environment at the same site as ``values[i]``; it may be
    NaN at the leftmost site when that cell was never drawn.
    """
    origin_offset: int
    values: np.ndarray
    omegas: Optional[np.ndarray] = None

    @property
    def left(self) -> int:
        return self.origin_offset

    @property
    def right(self) -> int:
        return self.origin_offset + len(self.values) - 1

    def V(self, x):
        return self.values[np.asarray(x) - self.origin_offset]

    def index(self, x: int) -> int:
        return x - self.origin_offset

    def reversed(self) -> "PotentialPath":
        """Mirror image x -> -x (V values reflected accordingly)."""
        return PotentialPath(-self.right, self.values[::-1].copy(),
                             None if self.omegas is None else self.omegas[::-1].copy())


@dataclass(frozen=True)
class LadderEpochs:
    epochs: np.ndarray
    incomplete: bool


@dataclass(frozen=True)
class ExcursionRecord:
    start: int
    end: int
    height: float
    t_h: int
    log_m1: float
    log_m1_prime: float
    log_m2: float
    log_r_minus: float

    @property
    def m1(self) -> float:
        return math.exp(self.log_m1)

    @property
    def m1_prime(self) -> float:
        return math.exp(self.log_m1_prime)

    @property
    def m2(self) -> float:
        return math.exp(self.log_m2)

    @property
    def r_minus(self) -> float:
        return math.exp(self.log_r_minus)

    @property
    def log_z(self) -> float:
        return self.log_m1 + self.log_m2 + self.height

    @property
    def z(self) -> float:
        return math.exp(min(self.log_z, 709.0)) if self.log_z < 709.0 else math.inf

    @property
    def length(self) -> int:
        return self.end - self.start


def build_potential(omega_block, origin: int) -> PotentialPath:
    """``omega_block[i]`` is the environment at site ``i - origin``."""
    w = np.asarray(omega_block, dtype=float)
    if w.size == 0:
        raise ValueError("empty environment block")
    if not 0 <= origin < w.size:
        raise ValueError("origin must index into the block")
    lr = log_rho(w)
    values = np.empty(w.size)
    values[origin] = 0.0
    values[origin + 1:] = np.cumsum(lr[origin + 1:])
    # V(x-1) = V(x) - log rho_x, walking left from the origin
    if origin > 0:
        values[:origin] = -np.cumsum(lr[origin:0:-1])[::-1]
    return PotentialPath(-origin, values, w.copy())


def ladder_epochs_forward(path: PotentialPath) -> LadderEpochs:
    """Weak descending ladder epochs e_0 = 0 < e_1 < ... inside the window."""
    if path.left > 0 or path.right < 0:
        raise ValueError("path must contain site 0")
    v = path.values[path.index(0):]
    prev_min = np.minimum.accumulate(v)[:-1]
    hits = np.flatnonzero(v[1:] <= prev_min) + 1
    epochs = np.concatenate(([0], hits)).astype(np.int64)
    return LadderEpochs(epochs, bool(epochs[-1] != path.right))


def ladder_epochs_backward(path: PotentialPath) -> LadderEpochs:
    """Epochs ... < e_{-2} < e_{-1} < e_0 = 0 (returned in increasing order).

    k < 0 is an epoch when V(l) >= V(k) for every window site l < k; the
    leftmost window site qualifies vacuously and is flagged as truncated.
    """
    if path.left > 0 or path.right < 0:
        raise ValueError("path must contain site 0")
    v = path.values[:path.index(0)]
    if v.size == 0:
        return LadderEpochs(np.array([0], dtype=np.int64), False)
    prior_min = np.concatenate(([np.inf], np.minimum.accumulate(v)[:-1]))
    idx = np.flatnonzero(v <= prior_min)
    sites = idx + path.left
    epochs = np.concatenate((sites, [0])).astype(np.int64)
    return LadderEpochs(epochs, True)


def _left_logsum(values: np.ndarray, upto: int, ref: float, certify: bool) -> float:
    """log sum_{k<=upto} exp(-(V(k) - ref)) over the window, optionally with a tail certificate."""
    seg = -(values[:upto + 1] - ref)
    total = float(logsumexp(seg))
    if not certify:
        return total
    n = min(_DRIFT_WINDOW, upto)
    if n == 0:
        raise WindowTooSmall("no left environment to certify the truncated sum")
    # mean log-ratio of successive terms when walking further left
    rate = (seg[0] - seg[n]) / n
    if rate >= 0:
        raise WindowTooSmall("left potential does not rise at the window edge")
    log_tail = seg[0] + rate - math.log1p(-math.exp(rate))
    if log_tail - total > math.log(R_MINUS_RTOL):
        raise WindowTooSmall("truncated left tail exceeds %.0e relative" % R_MINUS_RTOL)
    return total


def excursion_functionals(path: PotentialPath, i: int, epochs: Optional[LadderEpochs] = None,
                          certify: bool = True) -> ExcursionRecord:
    """Functionals of the i-th forward excursion [e_i, e_{i+1}].

    With ``certify=False`` the left sums stop at the window edge (finite-window
    semantics) instead of requiring a certified remainder.
    """
    if epochs is None:
        epochs = ladder_epochs_forward(path)
    e = epochs.epochs
    if i + 1 >= e.size:
        raise InsufficientExcursions("excursion %d is not complete in the window" % i)
    start, end = int(e[i]), int(e[i + 1])
    s, t = path.index(start), path.index(end)
    ref = path.values[s]
    w = path.values[s:t + 1] - ref
    height = float(max(0.0, w.max()))
    t_h = int(np.argmax(w >= height))
    log_m2 = float(logsumexp(w[:-1]) - height)
    log_r = _left_logsum(path.values, s, ref, certify)
    right = -w[1:]                      # terms for sites start+1 .. end
    if t_h == 0:
        log_m1 = float(logsumexp(-(path.values[:s] - ref))) if s > 0 else -math.inf
    else:
        log_m1 = float(np.logaddexp(log_r, logsumexp(right[:t_h - 1]))) if t_h > 1 else log_r
    log_m1p = float(np.logaddexp(log_r, logsumexp(right[:-1]))) if right.size > 1 else log_r
    return ExcursionRecord(start, end, height, t_h, log_m1, log_m1p, log_m2, log_r)


def write_excursion_csv(records: Iterable[ExcursionRecord], fh) -> None:
    """Rows of (H, T_H, M1, M1', M2, log Z, e1) with a versioned header line."""
    fh.write("# schema: valleywalk.excursions v1\n")
    out = csv.writer(fh)
    out.writerow(["H", "T_H", "M1", "M1'", "M2", "log Z", "e1"])
    for r in records:
        out.writerow([repr(r.height), r.t_h, repr(r.m1), repr(r.m1_prime), repr(r.m2), repr(r.log_z), r.length])


# ---------------------------------------------------------------------------------
# vectorized excursion batches
# ---------------------------------------------------------------------------------
@dataclass
class ExcursionBatch:
    """Forward first excursions, i.i.d.; excursion j uses ``omegas[starts[j]:starts[j]+lengths[j]]``
    as the environment on sites 1..e_1 relative to its start."""
    omegas: np.ndarray
    starts: np.ndarray
    lengths: np.ndarray
    height: np.ndarray
    t_h: np.ndarray
    drop: np.ndarray        # -V(e_1) >= 0
    log_m2: np.ndarray      # log sum_{0<=k<e_1} e^{V(k)-H}
    log_a: np.ndarray       # log sum_{0<=k<e_1} e^{-V(k)}
    log_m1_right: np.ndarray  # log sum_{0<=k<T_H} e^{-V(k)} (-inf when T_H=0)

    def __len__(self) -> int:
        return int(self.lengths.size)

    def omega_of(self, j: int) -> np.ndarray:
        s = int(self.starts[j])
        return self.omegas[s:s + int(self.lengths[j])]

    def take(self, idx) -> "ExcursionBatch":
        idx = np.asarray(idx, dtype=np.int64)
        lengths = self.lengths[idx]
        starts = np.concatenate(([0], np.cumsum(lengths)[:-1])).astype(np.int64)
        gather = np.repeat(self.starts[idx] - starts, lengths) + np.arange(int(lengths.sum()))
        return ExcursionBatch(self.omegas[gather], starts, lengths.copy(), self.height[idx], self.t_h[idx],
                              self.drop[idx], self.log_m2[idx], self.log_a[idx], self.log_m1_right[idx])

    @staticmethod
    def concat(batches: Iterable["ExcursionBatch"]) -> "ExcursionBatch":
        batches = list(batches)
        offsets = np.cumsum([0] + [b.omegas.size for b in batches[:-1]])
        return ExcursionBatch(
            np.concatenate([b.omegas for b in batches]),
            np.concatenate([b.starts + o for b, o in zip(batches, offsets)]).astype(np.int64),
            *(np.concatenate([getattr(b, f) for b in batches]) for f in
              ("lengths", "height", "t_h", "drop", "log_m2", "log_a", "log_m1_right")))


def _summarize(omegas: np.ndarray, ends: np.ndarray) -> ExcursionBatch:
    """Vectorized functionals for the excursions cut at the (exclusive) positions ``ends``."""
    lengths = np.diff(np.concatenate(([0], ends))).astype(np.int64)
    starts = np.concatenate(([0], ends[:-1])).astype(np.int64)
    lr = log_rho(omegas)
    cum = np.cumsum(lr)
    base = np.concatenate(([0.0], cum[starts[1:] - 1])) if starts.size else np.empty(0)
    seg_id = np.repeat(np.arange(lengths.size), lengths)
    w = cum - base[seg_id]              # V at sites 1..e_1 of each excursion
    is_last = np.zeros(w.size, dtype=bool)
    is_last[ends - 1] = True
    interior = np.where(is_last, -np.inf, w)
    height = np.maximum(np.maximum.reduceat(interior, starts), 0.0)
    local = np.arange(w.size) - starts[seg_id] + 1
    big = np.iinfo(np.int64).max
    first = np.minimum.reduceat(np.where(interior >= height[seg_id], local, big), starts)
    t_h = np.where(height > 0, first, 0).astype(np.int64)
    drop = -w[ends - 1]
    e_up = np.where(is_last, 0.0, np.exp(interior - height[seg_id]))
    m2 = np.add.reduceat(e_up, starts) + np.exp(-height)
    e_dn = np.where(is_last, 0.0, np.exp(-interior))
    a = np.add.reduceat(e_dn, starts) + 1.0
    before_top = local < t_h[seg_id]
    m1r = np.add.reduceat(np.where(before_top & ~is_last, e_dn, 0.0), starts) + (t_h > 0)
    with np.errstate(divide="ignore"):
        log_m1r = np.log(m1r)
    return ExcursionBatch(omegas, starts, lengths, height, t_h, drop, np.log(m2), np.log(a), log_m1r)


class ExcursionStream:
    """Exact i.i.d. forward excursions cut from one continuous environment stream.

    The unfinished tail of each environment block is carried into the next one,
    so no excursion is ever censored by the block boundary.
    """

    def __init__(self, model: EnvironmentModel, rng, block: int = 1 << 16):
        self.model = model
        self.gen = as_generator(rng)
        self.block = int(block)
        self._carry = np.empty(0)

    def next_batch(self) -> ExcursionBatch:
        while True:
            w = np.concatenate((self._carry, sample_omega_block(self.model, self.block, self.gen)))
            v = np.cumsum(log_rho(w))
            prev_min = np.minimum.accumulate(np.concatenate(([0.0], v)))[:-1]
            cut = np.flatnonzero(v <= prev_min) + 1
            if cut.size:
                self._carry = w[cut[-1]:]
                return _summarize(w[:cut[-1]], cut)
            self._carry = w

    def take(self, count: int) -> ExcursionBatch:
        parts, have = [], 0
        leftover = getattr(self, "_leftover", None)
        if leftover is not None and len(leftover):
            parts.append(leftover)
            have += len(leftover)
        while have < count:
            b = self.next_batch()
            parts.append(b)
            have += len(b)
        allb = parts[0] if len(parts) == 1 else ExcursionBatch.concat(parts)
        if have > count:
            self._leftover = allb.take(np.arange(count, have))
            return allb.take(np.arange(count))
        self._leftover = None
        return allb


def sample_excursions(model: EnvironmentModel, count: int, rng, block: int = 1 << 16) -> ExcursionBatch:
    return ExcursionStream(model, rng, block).take(int(count))


def excursion_heights(model: EnvironmentModel, count: int, rng, block: int = 1 << 18) -> np.ndarray:
    """Heights only (cheaper: avoids re-slicing the batch)."""
    stream = ExcursionStream(model, rng, block)
    out, have = [], 0
    while have < count:
        b = stream.next_batch()
        out.append(b.height)
        have += len(b)
    return np.concatenate(out)[:count]


# ---------------------------------------------------------------------------------
# conditioned left half-line
# ---------------------------------------------------------------------------------
@dataclass(frozen=True)
class ConditionedLeft:
    path: PotentialPath
    boundaries: np.ndarray   # e_{-J} < ... < e_{-1} < e_0 = 0
    heights: np.ndarray      # height of left excursion j = 1..J


def concatenate_left(batch: ExcursionBatch) -> ConditionedLeft:
    """Glue the excursions of ``batch`` leftwards: excursion j occupies [e_{-j}, e_{-j+1}]."""
    lengths = batch.lengths
    bounds = -np.concatenate(([0], np.cumsum(lengths)))       # e_0, e_{-1}, ...
    total = int(-bounds[-1])
    values = np.empty(total + 1)
    omegas = np.full(total + 1, np.nan)
    level = 0.0                                               # V(e_{-j+1})
    for j in range(len(batch)):
        w = batch.omega_of(j)
        rise = np.cumsum(log_rho(w))                          # W(1..len)
        base = level - rise[-1]                               # V(e_{-j}) = level + D_j
        lo = total + int(bounds[j + 1])
        values[lo] = base
        values[lo + 1:lo + 1 + w.size] = base + rise
        values[lo + w.size] = level
        omegas[lo + 1:lo + 1 + w.size] = w
        level = base
    path = PotentialPath(-total, values, omegas)
    return ConditionedLeft(path, bounds[::-1].astype(np.int64), batch.height.copy())


def sample_conditioned_left(model: EnvironmentModel, n_excursions: int, rng) -> ConditionedLeft:
    if n_excursions < 1:
        raise ValueError("need at least one excursion")
    left = concatenate_left(sample_excursions(model, n_excursions, rng))
    if left.path.values.min() < 0.0:
        raise AssertionError("conditioned left path dipped below zero")
    return left


def sample_r_minus(model: EnvironmentModel, count: int, stream: ExcursionStream,
                   mean_drop: Optional[float] = None) -> np.ndarray:
    """log R_- = log sum_{k<=0} e^{-V(k)} under the conditioned left law, one value per sample.

    R_- = 1 + sum_j e^{-S_j} A_j with S_j the cumulative drops of the left
    excursions; each sample is extended until the expected remainder is below
    R_MINUS_RTOL relative.
    """
    if mean_drop is None:
        probe = stream.take(4096)
        mean_drop = float(probe.drop.mean())
    J = int(math.ceil(34.0 / max(mean_drop, 1e-3))) + 8
    ex = stream.take(count * J)
    drops = ex.drop.reshape(count, J)
    log_a = ex.log_a.reshape(count, J)
    mean_a = float(np.exp(log_a).mean())
    geo = float(np.exp(-drops).mean())
    tail_const = math.log(mean_a * geo / max(1e-12, 1.0 - geo))
    S = np.cumsum(drops, axis=1)
    log_r = np.logaddexp(0.0, logsumexp(log_a - S, axis=1))
    s_last = S[:, -1]
    need = np.flatnonzero(tail_const - s_last - log_r > math.log(R_MINUS_RTOL))
    while need.size:
        more = stream.take(need.size * J)
        d2 = more.drop.reshape(need.size, J)
        a2 = more.log_a.reshape(need.size, J)
        S2 = s_last[need, None] + np.cumsum(d2, axis=1)
        log_r[need] = np.logaddexp(log_r[need], logsumexp(a2 - S2, axis=1))
        s_last[need] = S2[:, -1]
        need = need[tail_const - s_last[need] - log_r[need] > math.log(R_MINUS_RTOL)]
    return log_r


@dataclass
class ZSample:
    height: np.ndarray
    log_z: np.ndarray
    log_m1: np.ndarray
    log_m2: np.ndarray
    log_r_minus: np.ndarray
    length: np.ndarray


def sample_z(model: EnvironmentModel, count: int, rng) -> ZSample:
    """Z = M1 M2 e^H of the first excursion under the conditioned left law."""
    stream = ExcursionStream(model, rng)
    right = stream.take(count)
    log_r = sample_r_minus(model, count, stream)
    # M1 = (R_- - 1) + sum_{0<=k<T_H} e^{-V(k)}
    log_left_strict = np.where(log_r > 0, log_r + np.log1p(-np.exp(-np.maximum(log_r, 1e-300))), -np.inf)
    log_m1 = np.logaddexp(log_left_strict, right.log_m1_right)
    log_z = log_m1 + right.log_m2 + right.height
    return ZSample(right.height, log_z, log_m1, right.log_m2, log_r, right.lengths)


# ---------------------------------------------------------------------------------
# tall excursions by exponential tilting
# ---------------------------------------------------------------------------------
@dataclass
class WeightedExcursions:
    """First excursions conditioned on H >= h; ``weights`` are likelihood ratios (unnormalized)."""
    height: np.ndarray
    length: np.ndarray
    t_h: np.ndarray
    max_drop_before_top: np.ndarray   # max_{i<=j<=T_H} (V(i) - V(j))
    max_rise_after_top: np.ndarray    # max_{T_H<=i<=j<=e_1} (V(j) - V(i))
    weights: np.ndarray
    h: float


def sample_tall_excursions(model: EnvironmentModel, h: float, count: int, rng,
                           max_steps: int = 20_000) -> WeightedExcursions:
    """Importance-sample first excursions with H >= h.

    Steps come from the rho^kappa-tilted law until V first reaches h (runs that
    end first get weight 0), then from the original law until V <= 0.  The
    likelihood ratio is exp(-kappa V(T)) at the switching time T.
    """
    gen = as_generator(rng)
    tilt = model.tilted()
    v = np.zeros(count)
    phase = np.zeros(count, dtype=np.int8)      # 0 tilted climb, 1 descent, 2 done, 3 rejected
    weight = np.zeros(count)
    history = [v.copy()]
    for _ in range(max_steps):
        climb = np.flatnonzero(phase == 0)
        desc = np.flatnonzero(phase == 1)
        if climb.size + desc.size == 0:
            break
        if climb.size:
            v[climb] += log_rho(sample_omega_block(tilt, climb.size, gen))
        if desc.size:
            v[desc] += log_rho(sample_omega_block(model, desc.size, gen))
        row = np.full(count, np.nan)
        moving = np.concatenate((climb, desc))
        row[moving] = v[moving]
        history.append(row)
        ended = moving[v[moving] <= 0.0]
        phase[ended[phase[ended] == 0]] = 3
        phase[ended[phase[ended] == 1]] = 2
        up = climb[(phase[climb] == 0) & (v[climb] >= h)]
        weight[up] = np.exp(-model.kappa * v[up])
        phase[up] = 1
    ok = np.flatnonzero(phase == 2)
    paths = np.vstack(history)[:, ok]
    length = np.sum(~np.isnan(paths), axis=0) - 1
    filled = np.where(np.isnan(paths), -np.inf, paths)
    t_h = np.argmax(filled, axis=0)
    height = filled[t_h, np.arange(ok.size)]
    steps = np.arange(paths.shape[0])[:, None]
    before = steps <= t_h[None, :]
    run_max = np.maximum.accumulate(filled, axis=0)
    drop = np.max(np.where(before, run_max - filled, 0.0), axis=0)
    after = (steps >= t_h[None, :]) & ~np.isnan(paths)
    run_min = np.minimum.accumulate(np.where(after, paths, np.inf), axis=0)
    rise = np.max(np.where(after, paths - run_min, 0.0), axis=0)
    return WeightedExcursions(height, length, t_h, drop, rise, weight[ok], float(h))


def log_r_minus_second(path: PotentialPath) -> float:
    """log of the left-environment sum entering the failure second moment,

    sum_{i<=0} (1 + 2 sum_{i<=j<=0} e^{V(j)-V(i)}) (e^{-V(i)} + 2 sum_{k<i} e^{-V(k)}),
    truncated at the window edge.
    """
    v = path.values[:path.index(0) + 1]
    up = np.logaddexp.accumulate(v[::-1])[::-1]            # log sum_{i<=j<=0} e^{V(j)}
    first = np.logaddexp(0.0, math.log(2.0) + up - v)
    down = np.concatenate(([-np.inf], np.logaddexp.accumulate(-v)[:-1]))  # log sum_{k<i} e^{-V(k)}
    second = np.logaddexp(-v, math.log(2.0) + down)
    return float(logsumexp(first + second))
