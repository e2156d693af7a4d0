"""Counter-based random numbers.

Every random quantity in the package is a pure function of a master seed
and an integer key, so results do not depend on evaluation order and a
single variate can be recomputed on its own.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO52 = 1.0 / 4503599627370496.0

# stream tags keep independent uses of the same seed apart
TAG_POINTS = 1
TAG_PALM = 2
TAG_EDGES = 3
TAG_THIN = 4
TAG_WALK = 5
TAG_REPLICA = 6


@njit(cache=True)
def splitmix64(x):
    z = uint64(x) + GOLDEN
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True)
def combine(h, v):
    return splitmix64(uint64(h) ^ (uint64(v) * GOLDEN + uint64(0x632BE59BD9B4E019)))


@njit(cache=True)
def to_open_unit(h):
    """Map 64 random bits to a double in the open interval (0, 1)."""
    return (float(uint64(h) >> uint64(12)) + 0.5) * _TWO52


@njit(cache=True)
def keyed_uniform(key, counter):
    return to_open_unit(combine(key, counter))


@njit(cache=True)
def pair_uniform(seed, tag, i, j):
    """Uniform variate attached to the unordered pair ``{i, j}``."""
    lo = min(i, j)
    hi = max(i, j)
    return to_open_unit(combine(combine(combine(seed, tag), lo), hi))


@njit(cache=True)
def pair_uniforms(seed, tag, i, j):
    out = np.empty(i.shape[0])
    for k in range(i.shape[0]):
        out[k] = pair_uniform(seed, tag, i[k], j[k])
    return out


def generator(seed: int, *tags: int) -> np.random.Generator:
    """Numpy generator for bulk draws, derived from the seed and stream tags."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *tags]))


@njit(cache=True)
def _replica_key(seed, index):
    return combine(combine(seed, TAG_REPLICA), index) >> uint64(1)


def replica_seed(seed: int, index: int) -> int:
    """Independent seed for replica ``index`` of a run with master ``seed``."""
    return int(_replica_key(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(index)))
