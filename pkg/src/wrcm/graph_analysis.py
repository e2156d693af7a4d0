"""Components, degree tails and local geometric statistics of sampled graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .model import ModelError
from .rng import generator
from .sampler import Graph


@dataclass(frozen=True)
class Components:
    """Component label per vertex; labels are numbered by smallest member."""

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def count(self) -> int:
        return self.sizes.shape[0]

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def largest(self) -> int:
        # argmax returns the first maximiser, i.e. the one with the smallest member
        return int(np.argmax(self.sizes))


def _canonical(labels: np.ndarray) -> Components:
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    lab = rank[inv.ravel()]
    return Components(lab, np.bincount(lab, minlength=first.size))


def connected_components(graph: Graph | sparse.spmatrix) -> Components:
    adj = graph.adjacency if isinstance(graph, Graph) else sparse.csr_matrix(graph)
    if adj.shape[0] == 0:
        return Components(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    _, labels = csgraph.connected_components(adj, directed=False)
    return _canonical(labels.astype(np.int64))


def largest_component(graph: Graph) -> np.ndarray:
    comp = connected_components(graph)
    if comp.count == 0:
        return np.zeros(0, dtype=np.int64)
    return comp.members(comp.largest())


def induced_components(graph: Graph, vertices: np.ndarray) -> tuple[np.ndarray, Components]:
    """Components of the subgraph induced on ``vertices`` (returned sorted)."""
    vertices = np.unique(np.asarray(vertices, dtype=np.int64))
    sub = graph.adjacency[vertices][:, vertices]
    return vertices, connected_components(sub)


# ---------------------------------------------------------------------------
# degree tail


@dataclass(frozen=True)
class TailEstimate:
    tau: float
    tail_index: float
    stderr: float
    ci: tuple[float, float]
    k: int
    tail_fraction: float


def hill_tail_index(values, k: int) -> float:
    """Hill estimator of the survival exponent from the ``k`` largest values."""
    x = np.sort(np.asarray(values, dtype=float))[::-1]
    if not 1 <= k < x.size:
        raise ModelError(f"need 1 <= k < {x.size}, got k={k}")
    if x[k] <= 0:
        raise ModelError("tail threshold is not positive; too few vertices with positive degree")
    spread = float(np.sum(np.log(x[:k] / x[k])))
    if spread == 0:
        raise ModelError("no tail: the top values are all equal")
    return k / spread


def degree_tail_exponent(graph: Graph | np.ndarray, tail_fraction: float = 0.05, bootstrap: int = 200,
                         seed: int = 0, level: float = 0.95) -> TailEstimate:
    """Estimate ``tau`` in ``P(deg = k) ~ k**-tau`` with a bootstrap interval.

    The Hill estimate ``alpha`` of the survival exponent is turned into the
    mass-function exponent ``tau = 1 + alpha``.
    """
    deg = graph.degrees if isinstance(graph, Graph) else np.asarray(graph)
    if not 0 < tail_fraction < 1:
        raise ModelError("tail fraction must lie in (0, 1)")
    k = int(tail_fraction * deg.size)
    alpha = hill_tail_index(deg, k)
    rng = generator(seed, 0xB007)
    boots = np.empty(bootstrap)
    for b in range(bootstrap):
        boots[b] = 1 + hill_tail_index(rng.choice(deg, deg.size, replace=True), k)
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2]) if bootstrap else (math.nan, math.nan)
    err = float(boots.std(ddof=1)) if bootstrap > 1 else math.nan
    return TailEstimate(1 + alpha, alpha, err, (float(lo), float(hi)), k, tail_fraction)


# ---------------------------------------------------------------------------
# geometry of regions


@dataclass(frozen=True)
class Box:
    """Half-open axis-parallel box ``[lo, hi)``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ModelError("box corners are inconsistent")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def centered(cls, side: float, d: int, center=None):
        c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        return cls(c - side / 2, c + side / 2)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x < self.hi), axis=-1)

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        gap = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        return np.sqrt(np.sum(gap**2, axis=-1))


def local_cluster_density(graph: Graph, M: float, lam: float) -> tuple[int, bool]:
    """Largest cluster of the subgraph inside ``[-M/2, M/2)**d`` and whether it reaches ``M**(lam d)``."""
    d = graph.points.d
    if not 0 < M <= graph.points.window.side:
        raise ModelError(f"box side {M} does not fit in the window")
    box = Box.centered(M, d)
    inside = np.flatnonzero(box.contains(graph.points.positions))
    if inside.size == 0:
        return 0, False
    _, comp = induced_components(graph, inside)
    size = int(comp.sizes.max())
    return size, bool(size >= M ** (lam * d))


def _crossing(graph: Graph, region: Box):
    inside = region.contains(graph.points.positions)
    e = graph.edges
    cross = inside[e[:, 0]] != inside[e[:, 1]]
    return inside, e[cross]


def boundary_edge_count(graph: Graph, region: Box) -> int:
    """Number of edges with exactly one endpoint in ``region``."""
    return int(_crossing(graph, region)[1].shape[0])


def edge_reach(graph: Graph, region: Box) -> float:
    """Largest distance to ``region`` of a vertex outside it joined to a vertex inside."""
    inside, cross = _crossing(graph, region)
    if cross.shape[0] == 0:
        return 0.0
    outer = np.where(inside[cross[:, 0]], cross[:, 1], cross[:, 0])
    return float(region.distance(graph.points.positions[outer]).max())
