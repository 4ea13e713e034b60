"""Deterministic per-task random streams.

Every task draws from a generator keyed by ``(seed, domain, *ids)`` so that
results never depend on scheduling or worker count.
"""
from __future__ import annotations

import numpy as np

# domain tags keep independent uses of one seed apart
ENV = 1
WALK = 2
POOL = 3
EXTEND = 4
STABLE = 5
CONSTANTS = 6
AUX = 7


def stream(seed: int, domain: int, *ids: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(domain),) + tuple(int(i) for i in ids))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng, seed_domain: int = AUX) -> np.random.Generator:
    """Accept a Generator, an int seed or a (seed, *ids) tuple."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, tuple):
        return stream(rng[0], seed_domain, *rng[1:])
    return stream(int(rng), seed_domain)
