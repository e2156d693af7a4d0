"""Monte Carlo estimates of the probability that the origin reaches far away."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.sparse import csgraph

from .model import ModelError, ModelParams
from .rng import replica_seed
from .sampler import Graph, add_palm_origin, build_plan, restrict_to_beta, run_plan, sample_points


class BetaSearchError(RuntimeError):
    """The estimated curve does not cross the target level inside the bracket."""


@dataclass(frozen=True)
class ThetaEstimate:
    theta: float
    ci: tuple[float, float]
    hits: int
    replicas: int
    radius: float


@dataclass(frozen=True)
class BetaInterval:
    lo: float
    hi: float
    theta_lo: float
    theta_hi: float
    steps: int


def clopper_pearson(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = (1 - level) / 2
    lo = 0.0 if hits == 0 else float(stats.beta.ppf(a, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(stats.beta.ppf(1 - a, hits + 1, n - hits))
    return lo, hi


def reaches(graph: Graph, radius: float, root: int | None = None) -> bool:
    """Whether the component of ``root`` (default: the Palm vertex) reaches distance ``radius``."""
    root = graph.palm if root is None else root
    if root is None:
        raise ModelError("graph has no Palm vertex")
    comp = csgraph.breadth_first_order(graph.adjacency, root, directed=False, return_predecessors=False)
    x = graph.points.positions
    dist = np.sqrt(np.sum((x[comp] - x[root]) ** 2, axis=1))
    return bool(np.any(dist >= radius))


def _check_radius(params: ModelParams, radius: float):
    if not 0 < radius <= params.window.side / 2:
        raise ModelError(f"radius {radius} does not fit in a window of side {params.window.side}")


def _palm_graph(params: ModelParams, seed: int) -> Graph:
    pts = add_palm_origin(sample_points(params, seed), seed)
    plan = build_plan(pts, params.kernel, params.gamma)
    edges, marks = run_plan(plan, pts, params, seed)
    return Graph(pts, params, edges, marks, seed)


def estimate_theta(params: ModelParams, radius: float, replicas: int, seed: int, level: float = 0.95) -> ThetaEstimate:
    """Fraction of replicas in which the origin's cluster reaches distance ``radius``."""
    _check_radius(params, radius)
    if replicas < 1:
        raise ModelError("need at least one replica")
    hits = sum(reaches(_palm_graph(params, replica_seed(seed, r)), radius) for r in range(replicas))
    return ThetaEstimate(hits / replicas, clopper_pearson(hits, replicas, level), hits, replicas, radius)


class CoupledReplicas:
    """Replica graphs sampled once at a top ``beta`` and restricted downwards.

    Restriction reuses the points and edge uniforms, so the estimated curve
    is non-decreasing in ``beta`` in every replica.
    """

    def __init__(self, params: ModelParams, radius: float, replicas: int, seed: int):
        _check_radius(params, radius)
        self.params = params
        self.radius = radius
        self.graphs = [_palm_graph(params, replica_seed(seed, r)) for r in range(replicas)]

    def hits(self, beta: float) -> np.ndarray:
        if beta > self.params.beta:
            raise ModelError("beta above the coupling ceiling")
        return np.array([reaches(restrict_to_beta(g, beta), self.radius) for g in self.graphs])

    def theta(self, beta: float) -> float:
        return float(self.hits(beta).mean())


def theta_curve(params: ModelParams, radius: float, betas, replicas: int, seed: int) -> np.ndarray:
    betas = np.asarray(betas, dtype=float)
    coupled = CoupledReplicas(params.replace(beta=float(betas.max())), radius, replicas, seed)
    return np.array([coupled.theta(b) for b in betas])


def estimate_beta_c(params: ModelParams, radius: float, replicas: int, beta_lo: float, beta_hi: float,
                    tol: float, seed: int, level: float = 0.5) -> BetaInterval:
    """Bracket the ``beta`` at which the coupled estimate crosses ``level``."""
    if not 0 < beta_lo < beta_hi:
        raise ModelError("need 0 < beta_lo < beta_hi")
    if tol <= 0:
        raise ModelError("tolerance must be positive")
    coupled = CoupledReplicas(params.replace(beta=beta_hi), radius, replicas, seed)
    t_lo, t_hi = coupled.theta(beta_lo), coupled.theta(beta_hi)
    if not (t_lo < level <= t_hi):
        raise BetaSearchError(f"no crossing of {level} in [{beta_lo}, {beta_hi}]: theta = {t_lo}, {t_hi}")
    lo, hi = beta_lo, beta_hi
    steps = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        t = coupled.theta(mid)
        if t < level:
            lo, t_lo = mid, t
        else:
            hi, t_hi = mid, t
        steps += 1
    return BetaInterval(lo, hi, t_lo, t_hi, steps)
