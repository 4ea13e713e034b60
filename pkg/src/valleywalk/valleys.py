"""Deep valleys: critical height, valley width and the decomposition of the first n excursions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env_model import EnvironmentModel
from .errors import InsufficientExcursions, TooSmall
from .potential import ExcursionBatch, ExcursionRecord, ExcursionStream
from .rng import as_generator

DEFAULT_GAMMA = 1.0


def critical_height(n: int, kappa: float) -> float:
    """h_n = (1/kappa) log n - log log n, clamped at 0."""
    if n < 3:
        raise TooSmall("critical height needs n >= 3 (got %d)" % n)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return max(0.0, math.log(n) / kappa - math.log(math.log(n)))


def valley_width(n: int, kappa: float, gamma: float = DEFAULT_GAMMA, A: float = 1.0) -> int:
    """D_n = ceil((1 + gamma) / (A kappa) * log n)."""
    if A <= 0 or kappa <= 0 or gamma <= 0:
        raise ValueError("A, kappa and gamma must be positive")
    if n <= 1:
        return 0
    # guard against ceil(4.000000000000001) when the product is an integer in exact arithmetic
    x = (1.0 + gamma) / (A * kappa) * math.log(n)
    return int(math.ceil(x - 1e-12 * max(1.0, x)))


def mean_drop(model: EnvironmentModel, count: int = 100_000, rng=0) -> tuple[float, float]:
    """Monte Carlo E[-V(e_1)] with its standard error."""
    drops = ExcursionStream(model, as_generator(rng)).take(int(count)).drop
    return float(drops.mean()), float(drops.std(ddof=1) / math.sqrt(drops.size))


@dataclass(frozen=True)
class Valley:
    sigma: int                 # excursion index: the valley bottom is e_sigma
    a: Optional[int]           # e_{sigma - D_n}; None when that epoch lies left of 0
    b: int
    d: int
    height: float


@dataclass
class ValleyDecomposition:
    n: int
    h_n: float
    d_n_width: int
    q_n_hat: float
    valleys: list = field(default_factory=list)
    k_n: int = 0
    no_event: bool = True

    def rows(self) -> list[dict]:
        return [{"sigma": v.sigma, "a": v.a, "b": v.b, "d": v.d, "height": v.height} for v in self.valleys]


def _heights_lengths(excursions) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(excursions, ExcursionBatch):
        return np.asarray(excursions.height, dtype=float), np.asarray(excursions.lengths, dtype=np.int64)
    recs: Sequence[ExcursionRecord] = list(excursions)
    return (np.array([r.height for r in recs], dtype=float),
            np.array([r.end - r.start for r in recs], dtype=np.int64))


def decompose(excursions, n: int, gamma: float = DEFAULT_GAMMA, A: float = 1.0, kappa: float = 1.0,
              h_n: Optional[float] = None, d_n: Optional[int] = None,
              q_n_hat: Optional[float] = None) -> ValleyDecomposition:
    """Deep valleys among the first n excursions.

    ``h_n``/``d_n`` override the default critical height and width.  ``q_n_hat``
    should come from an independent sample; without it the frequency among the
    first n excursions is used.
    """
    heights, lengths = _heights_lengths(excursions)
    if heights.size < n:
        raise InsufficientExcursions("need %d excursions, got %d" % (n, heights.size))
    if h_n is None:
        h_n = critical_height(n, kappa)
    if d_n is None:
        d_n = valley_width(n, kappa, gamma, A)
    heights = heights[:n]
    epochs = np.concatenate(([0], np.cumsum(lengths[:n])))
    sigma = np.flatnonzero(heights >= h_n)
    valleys = []
    for s in sigma:
        k = int(s) - d_n
        valleys.append(Valley(int(s), int(epochs[k]) if k >= 0 else None, int(epochs[s]), int(epochs[s + 1]),
                              float(heights[s])))
    no_event = True
    if valleys:
        first = valleys[0].a
        no_event = first is not None and first > 0
        for prev, nxt in zip(valleys, valleys[1:]):
            if nxt.a is None or not prev.d < nxt.a:
                no_event = False
                break
    if q_n_hat is None:
        q_n_hat = float(np.mean(heights > h_n))
    return ValleyDecomposition(n, float(h_n), int(d_n), float(q_n_hat), valleys, len(valleys), bool(no_event))


def tail_frequency(model: EnvironmentModel, h: float, count: int, rng) -> tuple[float, float]:
    """Independent estimate of q = P(H > h) with its binomial standard error."""
    from .potential import excursion_heights

    heights = excursion_heights(model, int(count), as_generator(rng))
    q = float(np.mean(heights > h))
    return q, math.sqrt(max(q * (1 - q), 1e-300) / heights.size)
