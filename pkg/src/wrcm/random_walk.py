"""Simple random walks on sampled graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError
from .percolation import clopper_pearson
from .rng import TAG_WALK, generator
from .sampler import Graph


class IsolatedStartError(ModelError):
    """The walk was asked to start at a vertex without neighbours."""


@dataclass(frozen=True)
class WalkStats:
    horizon: int
    replicas: int
    returns: int
    first_return_counts: np.ndarray  # index t holds walks first back at time t
    mean_max_displacement: float
    max_displacement: float


@dataclass(frozen=True)
class ReturnEstimate:
    probability: float
    ci: tuple[float, float]
    stats: WalkStats


def _csr(graph: Graph):
    a = graph.adjacency
    return a.indptr.astype(np.int64), a.indices.astype(np.int64), np.diff(a.indptr).astype(np.int64)


def _resolve_start(graph: Graph, start) -> int:
    if isinstance(start, str):
        if start != "palm" or graph.palm is None:
            raise ModelError(f"unknown start vertex {start!r}")
        start = graph.palm
    start = int(start)
    if not 0 <= start < graph.n:
        raise ModelError(f"start vertex {start} out of range")
    if graph.degrees[start] == 0:
        raise IsolatedStartError(f"vertex {start} is isolated")
    return start


def walk(graph: Graph, start, steps: int, seed: int) -> np.ndarray:
    """Vertices visited by one walk, starting point included."""
    start = _resolve_start(graph, start)
    indptr, indices, deg = _csr(graph)
    u = generator(seed, TAG_WALK, 1).random(steps)
    path = np.empty(steps + 1, dtype=np.int64)
    path[0] = cur = start
    for t in range(steps):
        cur = indices[indptr[cur] + int(u[t] * deg[cur])]
        path[t + 1] = cur
    return path


def return_probability(graph: Graph, start, horizon: int, replicas: int, seed: int,
                       level: float = 0.95) -> ReturnEstimate:
    """Fraction of walks that come back to ``start`` within ``horizon`` steps.

    The walks share one uniform per replica and step, so for fixed seed the
    estimate can only grow with the horizon.
    """
    start = _resolve_start(graph, start)
    if horizon < 1 or replicas < 1:
        raise ModelError("horizon and replicas must be positive")
    indptr, indices, deg = _csr(graph)
    rng = generator(seed, TAG_WALK, 2)
    x = graph.points.positions
    cur = np.full(replicas, start, dtype=np.int64)
    first = np.zeros(replicas, dtype=np.int64)
    maxdisp = np.zeros(replicas)
    for t in range(1, horizon + 1):
        u = rng.random(replicas)
        cur = indices[indptr[cur] + (u * deg[cur]).astype(np.int64)]
        back = (cur == start) & (first == 0)
        first[back] = t
        np.maximum(maxdisp, np.sqrt(np.sum((x[cur] - x[start]) ** 2, axis=1)), out=maxdisp)
    returns = int(np.count_nonzero(first))
    counts = np.bincount(first[first > 0], minlength=horizon + 1)
    stats = WalkStats(horizon, replicas, returns, counts, float(maxdisp.mean()), float(maxdisp.max()))
    return ReturnEstimate(returns / replicas, clopper_pearson(returns, replicas, level), stats)
