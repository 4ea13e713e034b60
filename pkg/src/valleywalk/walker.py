"""Walk simulation: hitting times, left-occupation times and valley crossings.

Environments are materialized lazily in blocks and kept for the lifetime of a
replicate, so every revisit of a site sees the same omega.  Randomness for the
steps comes from a :class:`UniformTape`; since every kernel consumes exactly
one uniform per step (and one per geometric or direction draw), results do not
depend on the tape's chunk size or on the kernel backend.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels as K
from .env_model import EnvironmentModel, sample_omega_block
from .errors import BudgetExhausted, DegenerateValley, WindowTooSmall
from .potential import ExcursionStream
from .quenched import REFLECT, HTransformPair, WindowEnvironment
from .rng import ENV, EXTEND, WALK, as_generator, stream

DEFAULT_BUDGET = 10 ** 9
NO_MARK = -(1 << 62)
_SENTINEL = -(1 << 62) + 7          # a position no walk can reach
_MAX_RESTART_BUFFER = 1 << 22       # beyond this a sample is finished by the resumable path
_IID_LEFT = 64

IID = "iid"
CONDITIONED = "conditioned"


class UniformTape:
    """A refillable buffer of U(0,1) draws read sequentially by the kernels."""

    def __init__(self, rng, chunk: int = 1 << 16):
        self.gen = as_generator(rng, WALK)
        self.chunk = int(chunk)
        self.u = np.empty(0)
        self.ui = 0

    def refill(self, keep_from: Optional[int] = None) -> None:
        """Drop everything before ``keep_from`` (default: the read position) and append fresh draws."""
        keep = self.ui if keep_from is None else keep_from
        rest = self.u[keep:]
        grow = max(self.chunk, rest.size)
        self.u = np.concatenate((rest, self.gen.random(grow)))
        self.ui -= keep


def iid_left_source(model: EnvironmentModel, rng, block: int = 4096) -> Callable[[], np.ndarray]:
    gen = as_generator(rng, ENV)
    return lambda: sample_omega_block(model, block, gen)


def conditioned_left_source(model: EnvironmentModel, rng, excursions: int = 8) -> Callable[[], np.ndarray]:
    """Blocks of whole first excursions glued leftwards, so that V >= 0 on the left half-line."""
    excursion_stream = ExcursionStream(model, as_generator(rng, ENV), block=4096)

    def draw():
        batch = excursion_stream.take(excursions)
        return batch.take(np.arange(len(batch))[::-1]).omegas
    return draw


class LazyEnvironment:
    """omega on a growing interval of sites; ``origin`` is the array index of site 0.

    ``left_source()`` returns omegas for the sites immediately left of the
    current leftmost one (last entry adjacent); ``right_source()`` those to the
    right.  A missing source makes the corresponding edge hard.
    """

    def __init__(self, omegas, origin: int, left_source: Optional[Callable] = None,
                 right_source: Optional[Callable] = None):
        self.omega = np.ascontiguousarray(omegas, dtype=float)
        self.origin = int(origin)
        self.left_source = left_source
        self.right_source = right_source
        self.extensions = 0

    @classmethod
    def iid(cls, model: EnvironmentModel, rng, block: int = 4096) -> "LazyEnvironment":
        gen = as_generator(rng, ENV)
        left = gen.spawn(1)[0]
        right = gen.spawn(1)[0]
        w0 = sample_omega_block(model, block, left)
        w1 = sample_omega_block(model, block, right)
        return cls(np.concatenate((w0, w1)), block - 1,
                   iid_left_source(model, left, block), lambda: sample_omega_block(model, block, right))

    @classmethod
    def conditioned(cls, model: EnvironmentModel, rng, block: int = 4096) -> "LazyEnvironment":
        """Left half-line under the conditioned law, i.i.d. to the right of 0."""
        gen = as_generator(rng, ENV)
        left = gen.spawn(1)[0]
        right = gen.spawn(1)[0]
        src = conditioned_left_source(model, left)
        w0 = src()
        w1 = sample_omega_block(model, block, right)
        return cls(np.concatenate((w0, w1)), w0.size - 1, src, lambda: sample_omega_block(model, block, right))

    @classmethod
    def fixed(cls, omegas, origin: int) -> "LazyEnvironment":
        return cls(omegas, origin)

    @classmethod
    def from_window(cls, env: WindowEnvironment) -> "LazyEnvironment":
        w = env.omegas.copy()
        if env.boundary == REFLECT:
            w[0] = 1.0
        return cls(w, -env.left)

    @property
    def leftmost(self) -> int:
        return -self.origin

    @property
    def rightmost(self) -> int:
        return self.omega.size - 1 - self.origin

    def index(self, site: int) -> int:
        return site + self.origin

    def site(self, index: int) -> int:
        return index - self.origin

    def omega_at(self, site: int) -> float:
        self.ensure(site, site)
        return float(self.omega[self.index(site)])

    def extend_left(self) -> int:
        """Prepend one block; returns the index shift."""
        if self.left_source is None:
            raise WindowTooSmall("walk left the fixed environment window at site %d" % (self.leftmost - 1))
        block = np.asarray(self.left_source(), dtype=float)
        self.omega = np.concatenate((block, self.omega))
        self.origin += block.size
        self.extensions += 1
        return block.size

    def extend_right(self) -> None:
        if self.right_source is None:
            raise WindowTooSmall("walk left the fixed environment window at site %d" % (self.rightmost + 1))
        self.omega = np.concatenate((self.omega, np.asarray(self.right_source(), dtype=float)))
        self.extensions += 1

    def ensure(self, lo_site: int, hi_site: int) -> None:
        while lo_site < self.leftmost:
            self.extend_left()
        while hi_site > self.rightmost:
            self.extend_right()


@dataclass(frozen=True)
class WalkOutcome:
    tau: int
    truncated: bool
    min_position: Optional[int] = None
    left_time: int = 0


def _as_lazy(env) -> LazyEnvironment:
    if isinstance(env, LazyEnvironment):
        return env
    if isinstance(env, WindowEnvironment):
        return LazyEnvironment.from_window(env)
    raise TypeError("expected a LazyEnvironment or WindowEnvironment")


def _walk(env: LazyEnvironment, pos: int, target: int, tape: UniformTape, budget: int,
          mark: int = NO_MARK, track_min: bool = False):
    """Step from index ``pos`` until index ``target``; returns (steps, truncated, min_index, marked, pos).

    Indices are in the env's array coordinates at return time; the caller must
    re-derive them from sites if the environment was extended on the left.
    """
    steps = 0
    marked = 0
    low = pos
    edge = pos if track_min else 0
    up = target > pos
    if target == pos:
        return 0, False, low, 0, pos
    while True:
        hi = target if up else _SENTINEL
        lo = target if not up else _SENTINEL
        status, pos, taken, tape.ui, hits = K.walk(env.omega, pos, lo, hi, mark, edge, tape.u, tape.ui,
                                                   budget - steps)
        steps += taken
        marked += hits
        if status == K.HIT_HI or status == K.HIT_LO:
            return steps, False, min(low, pos), marked, pos
        if status == K.NEED_U:
            tape.refill()
        elif status == K.EDGE_LEFT:
            low = min(low, pos)
            if pos < 0:
                shift = env.extend_left()
                pos += shift
                target += shift
                low += shift
                if mark != NO_MARK:
                    mark += shift
            edge = low if track_min else 0
        elif status == K.EDGE_RIGHT:
            env.extend_right()
        else:
            return steps, True, low, marked, pos


def simulate_hitting_time(env, start: int, target: int, budget: int = DEFAULT_BUDGET, rng=None,
                          mark: Optional[int] = None, tape: Optional[UniformTape] = None) -> WalkOutcome:
    """tau(target) for the walk started at ``start`` (sites, not indices).

    ``mark`` turns on left-time counting: the number of steps landing on sites
    <= mark.  Budget exhaustion is reported through ``truncated``.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    lazy = _as_lazy(env)
    lazy.ensure(min(start, target), max(start, target))
    tape = tape or UniformTape(rng)
    idx_mark = NO_MARK if mark is None else lazy.index(mark)
    steps, truncated, low, marked, _ = _walk(lazy, lazy.index(start), lazy.index(target), tape, budget,
                                            idx_mark, track_min=True)
    return WalkOutcome(steps, truncated, lazy.site(low), marked)


def measure_left_time(env, z: int, x: int, y: int, budget: int = DEFAULT_BUDGET, rng=None,
                      tape: Optional[UniformTape] = None) -> int:
    """Steps spent on sites <= z between the first visits of x and y, starting at x."""
    if not z <= x <= y:
        raise ValueError("need z <= x <= y")
    if x == y:
        return 0
    out = simulate_hitting_time(env, x, y, budget, rng, mark=z, tape=tape)
    if out.truncated:
        raise BudgetExhausted("left-time measurement exhausted its budget of %d steps" % budget)
    return out.left_time


# -- valley crossings ------------------------------------------------------------------
class _ValleyScratch:
    def __init__(self, e1: int):
        self.hat = np.zeros(max(e1, 2) + 1)
        self.bar = np.zeros(max(e1, 2) + 1)
        self.work = np.zeros(3 * (max(e1, 2) + 1))
        self.state = np.zeros(6, dtype=np.int64)
        self.imark = np.zeros(1, dtype=np.int64)

    def reserve(self, e1: int) -> None:
        if self.hat.size <= e1:
            self.__init__(2 * e1)


def _transform(env: LazyEnvironment, zero: int, e1: int, scratch: _ValleyScratch,
               pair: Optional[HTransformPair]):
    if pair is None:
        return K.valley_transform(env.omega, zero, e1, scratch.hat, scratch.bar, scratch.work)
    if pair.e1 != e1:
        raise ValueError("transform pair is for a different valley")
    scratch.hat[:e1 + 1] = pair.failure_right
    scratch.bar[:e1 + 1] = pair.success_right
    p = math.exp(pair.log_p)
    return pair.log_p, (1.0 - pair.omega0) / p


def _cross_one(env: LazyEnvironment, zero: int, e1: int, tape: UniformTape, budget: int,
               mark: int = NO_MARK, scratch: Optional[_ValleyScratch] = None,
               pair: Optional[HTransformPair] = None, count: int = 1):
    """Resumable decomposition crossings of the valley at index ``zero`` of width ``e1``.

    Returns (taus, marks) with -1 marking truncated samples.
    """
    taus = np.zeros(count, dtype=np.int64)
    marks = np.zeros(count, dtype=np.int64)
    env.ensure(env.site(zero), env.site(zero) + e1)
    scratch = scratch or _ValleyScratch(e1)
    scratch.reserve(e1)
    log_p, p_left = _transform(env, zero, e1, scratch, pair)
    state = scratch.state
    state[:] = 0
    while True:
        status, tape.ui = K.fast_valley(env.omega, zero, e1, scratch.hat, scratch.bar, log_p, p_left, mark,
                                        0, tape.u, tape.ui, state, count, taus, marks, budget)
        if status == K.DONE:
            return taus, marks
        if status == K.NEED_U:
            tape.refill()
        else:
            # only the left-failure phase walks in env coordinates
            shift = env.extend_left()
            zero += shift
            state[3] += shift
            if mark != NO_MARK:
                mark += shift


def _cross_one_direct(env: LazyEnvironment, zero_site: int, e1: int, tape: UniformTape, budget: int,
                      mark_site: Optional[int], count: int):
    taus = np.zeros(count, dtype=np.int64)
    marks = np.zeros(count, dtype=np.int64)
    for j in range(count):
        mark = NO_MARK if mark_site is None else env.index(mark_site)
        steps, truncated, _, hits, _ = _walk(env, env.index(zero_site), env.index(zero_site + e1), tape, budget,
                                             mark)
        taus[j] = -1 if truncated else steps
        marks[j] = hits
    return taus, marks


def simulate_valley_crossing_fast(env, zero: int, e1: int, count: int = 1, rng=None,
                                  budget: int = DEFAULT_BUDGET, pair: Optional[HTransformPair] = None,
                                  mark: Optional[int] = None, tape: Optional[UniformTape] = None,
                                  return_marks: bool = False):
    """Crossing times of [zero, zero + e1] by the failure/success decomposition.

    A geometric number of failed attempts (walks in the failure transform on
    the right, in the original environment on the left) is followed by one
    successful attempt.  Same law as :func:`simulate_valley_crossing_direct`.
    """
    if e1 < 1:
        raise DegenerateValley("valley width must be positive")
    lazy = _as_lazy(env)
    tape = tape or UniformTape(rng)
    lazy.ensure(zero, zero + e1)
    idx_mark = NO_MARK if mark is None else lazy.index(mark)
    taus, marks = _cross_one(lazy, lazy.index(zero), e1, tape, budget, idx_mark, pair=pair, count=count)
    return (taus, marks) if return_marks else taus


def simulate_valley_crossing_direct(env, zero: int, e1: int, count: int = 1, rng=None,
                                    budget: int = DEFAULT_BUDGET, mark: Optional[int] = None,
                                    tape: Optional[UniformTape] = None, return_marks: bool = False):
    """Crossing times of [zero, zero + e1] by plain stepping."""
    if e1 < 1:
        raise DegenerateValley("valley width must be positive")
    lazy = _as_lazy(env)
    tape = tape or UniformTape(rng)
    lazy.ensure(zero, zero + e1)
    taus, marks = _cross_one_direct(lazy, zero, e1, tape, budget, mark, count)
    return (taus, marks) if return_marks else taus


# -- hitting time of e_n -----------------------------------------------------------------
@dataclass
class DeepCrossing:
    excursion: int         # i: the valley spans [e_i, e_{i+1}]
    bottom: int            # b = e_i
    exit: int              # d = e_{i+1}
    height: float
    time: int              # tau(d) - tau(b)
    left_time: int         # steps on sites <= a during the crossing (0 when no width given)


@dataclass
class TauOutcome:
    replicate: int
    n: int
    tau: int
    truncated: bool
    e_n: int
    tau_ia: int
    threshold: float
    crossings: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def k_deep(self) -> int:
        return len(self.crossings)

    def to_record(self) -> dict:
        return {"replicate": self.replicate, "n": self.n, "tau": self.tau, "truncated": self.truncated,
                "e_n": self.e_n, "tau_ia": self.tau_ia, "k_deep": self.k_deep, "threshold": self.threshold,
                "deep_times": [c.time for c in self.crossings],
                "left_times": [c.left_time for c in self.crossings],
                "wall_time": self.wall_time}


def _left_source(model: EnvironmentModel, environment: str, gen):
    if environment == IID:
        return iid_left_source(model, gen)
    if environment == CONDITIONED:
        return conditioned_left_source(model, gen)
    raise ValueError("environment must be 'iid' or 'conditioned'")


def simulate_tau_n(model: EnvironmentModel, n: int, seed: int, replicate: int = 0,
                   budget: int = DEFAULT_BUDGET, fast: bool = True, threshold: Optional[float] = None,
                   environment: str = IID, width: Optional[int] = None,
                   target: Optional[int] = None) -> TauOutcome:
    """One replicate of tau(e_n), the hitting time of the n-th ladder epoch,
    or of tau(target) for a site ``target <= n``.

    Valleys of height >= ``threshold`` (default: the critical height h_n) are
    crossed separately so that tau_IA, the time outside them, is available;
    with ``fast`` they use the decomposition sampler.  ``width`` (D_n) turns on
    left-time counting to the left of a_i = e_{i-D_n}.
    """
    from .valleys import critical_height

    started = time.perf_counter()
    if n < 1:
        raise ValueError("n must be positive")
    if target is not None and not 0 < target <= n:
        raise ValueError("target must lie in 1..n")
    if threshold is None:
        threshold = critical_height(max(n, 3), model.kappa)
    right = ExcursionStream(model, stream(seed, ENV, replicate, 0), block=1 << 14).take(n)
    left_src = _left_source(model, environment, stream(seed, ENV, replicate, 1))
    w_left = left_src()
    env = LazyEnvironment(np.concatenate((w_left, right.omegas)), w_left.size - 1, left_src)
    epochs = np.concatenate(([0], np.cumsum(right.lengths)))
    e_n = int(epochs[-1]) if target is None else int(target)
    deep = np.flatnonzero((right.height >= threshold) & (epochs[1:] <= e_n))
    tape = UniformTape(stream(seed, WALK, replicate))
    scratch = _ValleyScratch(int(right.lengths.max()))

    steps = 0
    pos_site = 0
    truncated = False
    crossings = []
    for i in deep:
        b, d = int(epochs[i]), int(epochs[i + 1])
        if b > pos_site:
            used, trunc, _, _, _ = _walk(env, env.index(pos_site), env.index(b), tape, budget - steps)
            steps += used
            if trunc:
                truncated = True
                break
        mark_site = int(epochs[max(i - width, 0)]) if width is not None else None
        idx_mark = NO_MARK if mark_site is None else env.index(mark_site)
        if fast:
            taus, marks = _cross_one(env, env.index(b), d - b, tape, budget - steps, idx_mark, scratch)
        else:
            taus, marks = _cross_one_direct(env, b, d - b, tape, budget - steps, mark_site, 1)
        t = int(taus[0])
        if t < 0:
            truncated = True
            steps = budget
            break
        steps += t
        crossings.append(DeepCrossing(int(i), b, d, float(right.height[i]), t, int(marks[0])))
        pos_site = d
    if not truncated and pos_site < e_n:
        used, trunc, _, _, _ = _walk(env, env.index(pos_site), env.index(e_n), tape, budget - steps)
        steps += used
        truncated = trunc
    tau_ia = steps - sum(c.time for c in crossings)
    return TauOutcome(replicate, n, steps, truncated, e_n, tau_ia, float(threshold), crossings,
                      time.perf_counter() - started)


# -- tau(e_1) under the conditioned environment, many samples at once ----------------------------
@dataclass
class CrossingBatch:
    tau: np.ndarray         # -1 for truncated samples
    e1: np.ndarray
    restarts: int

    @property
    def truncated(self) -> int:
        return int(np.sum(self.tau < 0))


def _build_segments(model: EnvironmentModel, size: int, gen, left_excursions: int, environment: str):
    """Concatenate per-sample environments: left part (site 0 last) followed by sites 1..e_1."""
    excursion_stream = ExcursionStream(model, gen, block=1 << 16)
    right = excursion_stream.take(size)
    if environment == CONDITIONED:
        J = left_excursions
        left = excursion_stream.take(size * J)
        both = type(right).concat([left, right])
        order = np.empty((size, J + 1), dtype=np.int64)
        order[:, :J] = np.arange(size)[:, None] * J + np.arange(J - 1, -1, -1)[None, :]
        order[:, J] = size * J + np.arange(size)
        glued = both.take(order.ravel())
        lengths = glued.lengths.reshape(size, J + 1)
        left_len = lengths[:, :J].sum(axis=1)
        omegas = glued.omegas
    elif environment == IID:
        left_len = np.full(size, _IID_LEFT, dtype=np.int64)
        omegas = None
    else:
        raise ValueError("environment must be 'iid' or 'conditioned'")
    seg_len = left_len + right.lengths
    seg_lo = np.concatenate(([0], np.cumsum(seg_len)[:-1])).astype(np.int64)
    zero = (seg_lo + left_len - 1).astype(np.int64)
    if omegas is None:
        omegas = np.empty(int(seg_len.sum()))
        left_block = sample_omega_block(model, _IID_LEFT * size, gen)
        omegas[(seg_lo[:, None] + np.arange(_IID_LEFT)[None, :]).ravel()] = left_block
        within = np.arange(right.omegas.size) - np.repeat(right.starts, right.lengths)
        omegas[np.repeat(zero + 1, right.lengths) + within] = right.omegas
    return np.ascontiguousarray(omegas), seg_lo, zero, right.lengths.astype(np.int64)


def crossing_time_batch(model: EnvironmentModel, size: int, seed: int, batch: int, fast: bool = True,
                        budget: int = DEFAULT_BUDGET, left_excursions: int = 8,
                        environment: str = CONDITIONED, chunk: int = 1 << 20) -> CrossingBatch:
    """``size`` independent samples of tau(e_1), each with a fresh environment.

    Everything is keyed by (seed, batch), so the union of batches does not
    depend on how they are spread over workers.
    """
    omegas, seg_lo, zero, e1 = _build_segments(model, size, stream(seed, ENV, batch), left_excursions,
                                               environment)
    tape = UniformTape(stream(seed, WALK, batch), chunk)
    tape.refill()
    taus = np.zeros(size, dtype=np.int64)
    scratch = _ValleyScratch(int(e1.max()) if size else 1)
    restarts = 0
    s = 0
    while s < size:
        status, s, ui, ui_start = K.crossing_batch(fast, omegas, seg_lo, zero, e1, tape.u, tape.ui, s, size, taus,
                                                   budget, scratch.hat, scratch.bar, scratch.work, scratch.state,
                                                   scratch.imark)
        if status == K.DONE:
            tape.ui = ui
            break
        tape.ui = ui_start
        if status == K.NEED_U and tape.u.size - ui_start < _MAX_RESTART_BUFFER:
            tape.refill()
            continue
        # finish this sample on its own, extending its left environment as needed
        restarts += 1
        lo, z = int(seg_lo[s]), int(zero[s])
        ext = stream(seed, EXTEND, batch, s)
        if environment == CONDITIONED:
            src = conditioned_left_source(model, ext, left_excursions)
        else:
            src = iid_left_source(model, ext)
        hi = z + int(e1[s]) + 1
        local = LazyEnvironment(omegas[lo:hi].copy(), z - lo, src)
        if fast:
            out, _ = _cross_one(local, z - lo, int(e1[s]), tape, budget, NO_MARK, scratch)
            taus[s] = out[0]
        else:
            out, _ = _cross_one_direct(local, 0, int(e1[s]), tape, budget, None, 1)
            taus[s] = out[0]
        s += 1
    return CrossingBatch(taus, e1, restarts)
