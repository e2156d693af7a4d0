"""Renormalisation tools: connectors, stage sequences, box labels and coarse graining."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.special import gammaln

from .graph_analysis import induced_components
from .model import (Geometry, Kernel, ModelError, ModelParams, Profile, pair_prob_from_distance, profile_constants,
                    profile_value, unit_ball_volume)
from .rng import generator
from .sampler import Graph, MarkedPointSet, sample_graph

TAG_CONNECTOR = 11
TAG_STAGE = 12


# ---------------------------------------------------------------------------
# connectors


@dataclass(frozen=True)
class ConnectorBound:
    k_xy: float
    k_yx: float
    q: float
    lower_bound: float


def _rho(value, profile, delta, d):
    return float(profile_value(value, profile_constants(profile, delta, d)))


def _min_kernel_check(params: ModelParams):
    if params.kernel is not Kernel.MIN:
        raise ModelError("connector bounds are stated for the min kernel")


def connector_bound(x, y, params: ModelParams) -> ConnectorBound:
    """Lower bound on the probability that two small-mark vertices share a neighbour of mark above 1/2.

    ``x`` and ``y`` are ``(position, mark)`` pairs.
    """
    _min_kernel_check(params)
    (px, s), (py, t) = x, y
    if not (0 < s <= 0.5 and 0 < t <= 0.5):
        raise ModelError("both marks must lie in (0, 1/2]")
    g, d, beta = params.gamma, params.d, params.beta
    r = float(np.linalg.norm(np.asarray(px, dtype=float) - np.asarray(py, dtype=float)))

    def k(a, b):
        return a**-g * _rho(b**g * (a ** (-g / d) + r) ** d / beta, params.profile, params.delta, d)

    kxy, kyx = k(s, t), k(t, s)
    q = 0.5 * _rho(1 / beta, params.profile, params.delta, d) * unit_ball_volume(d) * max(kxy, kyx)
    return ConnectorBound(kxy, kyx, q, -math.expm1(-q))


def connector_exists(graph: Graph, i: int, j: int) -> bool:
    """Whether ``i`` and ``j`` have a common neighbour with mark above 1/2."""
    if i == j:
        raise ModelError("need two distinct vertices")
    for v in (i, j):
        if not 0 <= v < graph.n:
            raise ModelError(f"vertex {v} out of range")
    common = np.intersect1d(graph.neighbours(i), graph.neighbours(j), assume_unique=True)
    return bool(np.any(graph.points.marks[common] > 0.5))


@dataclass(frozen=True)
class ConnectorFrequency:
    hits: int
    replicas: int
    frequency: float
    sigma: float


def _two_vertices(params: ModelParams, r: float):
    d = params.d
    if r > params.window.side / 2:
        raise ModelError("distance does not fit in the window")
    px = np.zeros(d)
    py = np.zeros(d)
    px[0], py[0] = -r / 2, r / 2
    return px, py


def connector_frequency(params: ModelParams, s: float, t: float, r: float, replicas: int, seed: int,
                        batch: int = 256) -> ConnectorFrequency:
    """Monte Carlo frequency of a connector between two vertices at distance ``r``.

    Only vertices with mark above 1/2 can be connectors and the edges
    towards ``x`` and ``y`` are independent of everything else, so each
    replica samples just those vertices and those edges.  Connectors outside
    the window are missed, which makes the estimate conservative.
    """
    _min_kernel_check(params)
    if replicas < 1:
        raise ModelError("need at least one replica")
    px, py = _two_vertices(params, r)
    w = params.window
    rng = generator(seed, TAG_CONNECTOR)
    hits = 0
    done = 0
    while done < replicas:
        m = min(batch, replicas - done)
        counts = rng.poisson(w.volume / 2, size=m)
        total = int(counts.sum())
        z = rng.uniform(-w.side / 2, w.side / 2, size=(total, w.d))
        u = rng.uniform(0.5, 1.0, size=total)
        phx = _phi(params, w.distance(z, px), s, u)
        phy = _phi(params, w.distance(z, py), t, u)
        both = (rng.random(total) <= phx) & (rng.random(total) <= phy)
        owner = np.repeat(np.arange(m), counts)
        hits += int(np.count_nonzero(np.bincount(owner[both], minlength=m)))
        done += m
    f = hits / replicas
    return ConnectorFrequency(hits, replicas, f, math.sqrt(max(f * (1 - f), 1e-300) / replicas))


def _phi(params: ModelParams, r, s, u):
    return pair_prob_from_distance(r, np.asarray(s, dtype=float), u, params)


def connector_frequency_by_graph(params: ModelParams, s: float, t: float, r: float, replicas: int,
                                 seed: int) -> ConnectorFrequency:
    """Same estimate as :func:`connector_frequency`, via full graph samples and :func:`connector_exists`."""
    _min_kernel_check(params)
    px, py = _two_vertices(params, r)
    w = params.window
    hits = 0
    for rep in range(replicas):
        rng = generator(seed, TAG_CONNECTOR, rep + 1)
        n = rng.poisson(w.volume / 2)
        z = rng.uniform(-w.side / 2, w.side / 2, size=(n, w.d))
        u = rng.uniform(0.5, 1.0, size=n)
        u[u <= 0.5] = np.nextafter(0.5, 1)
        pts = MarkedPointSet(np.vstack([px, py, z]), np.concatenate([[s, t], u]), w)
        hits += connector_exists(sample_graph(pts, params, seed + rep), 0, 1)
    f = hits / replicas
    return ConnectorFrequency(hits, replicas, f, math.sqrt(max(f * (1 - f), 1e-300) / replicas))


# ---------------------------------------------------------------------------
# order statistics


@dataclass(frozen=True)
class OrderStatBounds:
    exact_min_given_max: float
    bound: float
    exact_cond: float


def order_stat_bounds(n: int, a: float, b: float, x: float, y: float) -> OrderStatBounds:
    """``P(min > a | max < b)`` for ``n`` uniforms, its exponential bound, and ``P(U < x | U < y)``."""
    if n < 1:
        raise ModelError("n must be positive")
    if not 0 <= a < b <= 1:
        raise ModelError("need 0 <= a < b <= 1")
    if not 0 <= x < y <= 1:
        raise ModelError("need 0 <= x < y <= 1")
    return OrderStatBounds((1 - a / b) ** n, math.exp(-n * a / b), x / y)


# ---------------------------------------------------------------------------
# stage sequences


@dataclass(frozen=True)
class StageSequences:
    kernel: Kernel
    gamma: float
    delta: float
    d: int
    beta: float
    n_star: int
    epsilon: float
    log_u: np.ndarray
    C: np.ndarray
    D: np.ndarray
    p_b: float
    p_b_exact: float
    partial_sums: np.ndarray  # running sums of 1/C_n
    via_min_kernel: bool

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.log_u)


def epsilon_range(kernel, gamma: float, delta: float, d: int) -> float:
    """Upper end of the legal ``epsilon`` interval; raises outside the robust regime."""
    kernel = Kernel(kernel)
    if kernel in (Kernel.MIN, Kernel.SUM, Kernel.PA):
        if not delta / (delta + 1) < gamma < 1:
            raise ModelError(f"{kernel.value} kernel needs delta/(delta+1) < gamma < 1")
        return 2 * (delta + 1) * gamma * d - 2 * delta * d
    if kernel is Kernel.PROD:
        if not 0.5 < gamma < 1:
            raise ModelError("prod kernel needs 1/2 < gamma < 1")
        return d * (2 - 1 / gamma)
    if kernel is Kernel.MAX:
        if not gamma > 0:
            raise ModelError("max kernel needs gamma > 0")
        return gamma / (1 + gamma)
    raise ModelError("no stage sequences for the plain kernel")


def _log_u(kernel, gamma, delta, d, beta, n_star, eps, n, profile, c1):
    m = n_star + n
    if kernel is Kernel.PROD:
        m2 = m + 2
        lfac = gammaln(m + 4) - gammaln(n_star + 1)
        return (math.log(beta) / (2 * gamma) - d / (4 * gamma) * math.log(d) - eps / (2 * gamma * delta) * np.log(m2)
                - d * m2 / (2 * n_star * gamma) * math.log(2) - d / gamma * lfac)
    if kernel is Kernel.MAX:
        m2 = m + 2
        lfac = gammaln(m + 4) - gammaln(n_star + 1)
        return (-math.log(c1) - eps / (delta * (1 + gamma)) * np.log(m2) - m2 * d / (n_star * (1 + gamma)) * math.log(2)
                - 2 * d / (1 + gamma) * lfac)
    e = gamma * (delta + 1)
    lfac = gammaln(m + 1) - gammaln(n_star + 1)
    return -math.log(c1) - eps / e * np.log(m) - m * d * delta / (n_star * e) * math.log(2) - 2 * d * delta / e * lfac


def min_kernel_constant(gamma: float, delta: float, d: int, beta: float, profile=Profile.POLYNOMIAL) -> float:
    rho = _rho(1 / beta, profile, delta, d)
    return (0.5 * unit_ball_volume(d) * rho * beta ** (delta - 1) * d ** (-d * delta / 2)) ** (-1 / (gamma * (delta + 1)))


def stage_sequences(kernel, gamma: float, delta: float, d: int, beta: float, n_star: int, epsilon: float, N: int,
                    profile=Profile.POLYNOMIAL, c1: float | None = None, p_b: float | None = None,
                    replicas: int = 10_000, seed: int = 0) -> StageSequences:
    """Mark thresholds ``u_n`` and box counts ``C_n``, ``D_n`` for ``n = 1..N``.

    ``p_b`` is estimated from ``replicas`` simulated first-stage boxes unless
    given.  The sum and pa kernels use the min-kernel sequences, which
    dominate them.  ``c1`` has a closed form for the min kernel only; for
    the max kernel it is a free input with default 1.
    """
    kernel = Kernel(kernel)
    top = epsilon_range(kernel, gamma, delta, d)
    if not 0 < epsilon < top:
        raise ModelError(f"epsilon must lie in (0, {top:.6g})")
    if n_star < 1 or N < 1:
        raise ModelError("n_star and N must be positive")
    if c1 is None:
        c1 = 1.0 if kernel is Kernel.MAX else min_kernel_constant(gamma, delta, d, beta, profile)
    n = np.arange(1, N + 1)
    log_u = np.asarray(_log_u(kernel, gamma, delta, d, beta, n_star, epsilon, n, profile, c1), dtype=float)

    volume = float(2 * n_star**2) ** d
    u1 = math.exp(log_u[0])
    p_exact = -math.expm1(-u1 * volume)
    if p_b is None:
        rng = generator(seed, TAG_STAGE)
        counts = rng.poisson(volume, size=replicas)
        lowest = np.where(counts > 0, rng.beta(1, np.maximum(counts, 1)), 1.0)
        p_b = float(np.mean(lowest < u1))
    if not 0 < p_b <= 1:
        raise ModelError(f"p_B = {p_b} leaves no first-stage boxes; increase n_star")
    C = p_b * (n_star + n).astype(float) ** (2 * d)
    D = 2.0 * (n_star + n) ** 2
    return StageSequences(kernel, gamma, delta, d, beta, n_star, epsilon, log_u, C, D, p_b, p_exact,
                          np.cumsum(1 / C), kernel in (Kernel.SUM, Kernel.PA))


# ---------------------------------------------------------------------------
# box labels


class BoxLabel(IntEnum):
    GOOD = 0
    BAD = 1
    IRREGULAR = 2


@dataclass(frozen=True)
class BoxLabeling:
    stage: int
    side: float
    threshold: float
    labels: np.ndarray  # one entry per box, indexed by box coordinates
    box_of_vertex: np.ndarray

    def fraction(self, label: BoxLabel) -> float:
        return float(np.mean(self.labels == label))

    @property
    def fractions(self) -> dict:
        return {lab.name.lower(): self.fraction(lab) for lab in BoxLabel}


def _box_grid(graph: Graph, side: float):
    w = graph.points.window
    m = int(w.side // side)
    idx = np.floor((graph.points.positions + w.side / 2) / side).astype(np.int64)
    return m, np.clip(idx, 0, m - 1)


def _dilate(mask: np.ndarray, wrap: bool) -> np.ndarray:
    out = mask.copy()
    for ax in range(mask.ndim):
        cur = out.copy()
        if wrap:
            out |= np.roll(cur, 1, axis=ax) | np.roll(cur, -1, axis=ax)
        else:
            lo = [slice(None)] * mask.ndim
            hi = [slice(None)] * mask.ndim
            lo[ax], hi[ax] = slice(1, None), slice(None, -1)
            out[tuple(lo)] |= cur[tuple(hi)]
            out[tuple(hi)] |= cur[tuple(lo)]
    return out


def classify_boxes(graph: Graph, l: int, epsilon_star: float) -> BoxLabeling:
    """Label the stage-``l`` boxes of side ``n_l`` as good, bad or irregular.

    A vertex is bad when its mark is below ``n_l**-d b(n_l**d)`` with
    ``b(v) = v**-epsilon_star``.  Boxes within one box (sup-distance) of a
    bad vertex are bad; a box that is not bad but holds a vertex adjacent to
    a bad vertex is irregular.  Leftover strips narrower than a box are
    merged into the last box of each row.
    """
    if l < 1:
        raise ModelError("stage must be at least 1")
    if epsilon_star <= 0:
        raise ModelError("epsilon_star must be positive")
    d = graph.points.d
    side = float(math.prod(range(1, 2 * l, 2)))
    w = graph.points.window
    if w.side < 3 * side:
        raise ModelError(f"window side {w.side} below three boxes of side {side:g}")
    threshold = side ** (-d * (1 + epsilon_star))
    m, idx = _box_grid(graph, side)
    flat = np.ravel_multi_index(idx.T, (m,) * d) if graph.n else np.zeros(0, dtype=np.int64)

    bad_v = graph.points.marks < threshold
    has_bad = np.zeros(m**d, dtype=bool)
    has_bad[flat[bad_v]] = True
    wrap = w.geometry is Geometry.TORUS and m * side == w.side
    bad_box = _dilate(has_bad.reshape((m,) * d), wrap).ravel()

    e = graph.edges
    irr_v = np.zeros(graph.n, dtype=bool)
    if e.size:
        a, b = e[:, 0], e[:, 1]
        irr_v[a[bad_v[b] & ~bad_v[a]]] = True
        irr_v[b[bad_v[a] & ~bad_v[b]]] = True
    irr_box = np.zeros(m**d, dtype=bool)
    irr_box[flat[irr_v]] = True

    labels = np.full(m**d, BoxLabel.GOOD, dtype=np.int8)
    labels[irr_box & ~bad_box] = BoxLabel.IRREGULAR
    labels[bad_box] = BoxLabel.BAD
    return BoxLabeling(l, side, threshold, labels.reshape((m,) * d), flat)


# ---------------------------------------------------------------------------
# coarse graining


@dataclass(frozen=True)
class CoarseGrain:
    M: float
    lam: float
    sites: np.ndarray  # lattice coordinates, one row per site
    occupied: np.ndarray
    occupying_sets: list  # vertex arrays, empty for vacant sites
    communicate: np.ndarray  # symmetric boolean matrix over sites

    @property
    def bonds(self) -> np.ndarray:
        i, j = np.nonzero(np.triu(self.communicate, 1))
        return np.column_stack([i, j])


def _occupying_set(graph: Graph, members: np.ndarray, size: int) -> np.ndarray:
    """First ``size`` vertices of the largest cluster in breadth-first order from its smallest vertex."""
    verts, comp = induced_components(graph, members)
    if comp.count == 0:
        return np.zeros(0, dtype=np.int64)
    best = comp.sizes.max()
    if best < size:
        return np.zeros(0, dtype=np.int64)
    # components are numbered by first appearance, so the lowest label holds the smallest vertex
    label = int(np.flatnonzero(comp.sizes == best)[0])
    cluster = verts[comp.labels == label]
    allowed = set(cluster.tolist())
    order = [int(cluster[0])]
    seen = {order[0]}
    head = 0
    while len(order) < size:
        v = order[head]
        head += 1
        for x in np.sort(graph.neighbours(v)).tolist():
            if x in allowed and x not in seen:
                seen.add(x)
                order.append(x)
                if len(order) == size:
                    break
    return np.array(order, dtype=np.int64)


def coarse_grain(graph: Graph, M: float, lam: float) -> CoarseGrain:
    """Sites of ``M Z^d`` occupied by a large local cluster and the bonds between their occupying sets.

    Only sites whose box ``M v + [-M/2, M/2)^d`` lies inside the window are
    used.  A site is occupied when some cluster of the graph restricted to
    its box has at least ``M**(lam d)`` vertices.
    """
    if not 0 < lam < 1:
        raise ModelError("lambda must lie in (0, 1)")
    w = graph.points.window
    d = w.d
    if M <= 0 or w.side < 3 * M:
        raise ModelError(f"window side {w.side} below three boxes of side {M}")
    half = int(math.floor((w.side / M - 1) / 2 + 1e-12))
    axis = np.arange(-half, half + 1)
    sites = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    size = math.ceil(M ** (lam * d) - 1e-9)

    k = np.floor(graph.points.positions / M + 0.5).astype(np.int64)
    inside = np.all(np.abs(k) <= half, axis=1)
    site_of = np.full(graph.n, -1, dtype=np.int64)
    site_of[inside] = np.ravel_multi_index((k[inside] + half).T, (2 * half + 1,) * d)

    order = np.argsort(site_of, kind="stable")
    bounds = np.searchsorted(site_of[order], np.arange(len(sites) + 1))
    sets = []
    owner = np.full(graph.n, -1, dtype=np.int64)
    for i in range(len(sites)):
        members = order[bounds[i] : bounds[i + 1]]
        chosen = _occupying_set(graph, members, size) if members.size else np.zeros(0, dtype=np.int64)
        sets.append(chosen)
        owner[chosen] = i
    occupied = np.array([s.size > 0 for s in sets])

    comm = np.zeros((len(sites), len(sites)), dtype=bool)
    e = graph.edges
    if e.size:
        a, b = owner[e[:, 0]], owner[e[:, 1]]
        keep = (a >= 0) & (b >= 0) & (a != b)
        comm[a[keep], b[keep]] = True
        comm[b[keep], a[keep]] = True
    return CoarseGrain(M, lam, sites, occupied, sets, comm)


def communication_bound(M: float, lam: float, delta_star: float, c_star: float, v, w, d: int) -> float:
    """Lower bound on the probability that two occupied sites communicate."""
    if not 1 < delta_star < 2:
        raise ModelError("delta_star must lie in (1, 2)")
    if not 0 < lam < 1:
        raise ModelError("lambda must lie in (0, 1)")
    if M <= 0 or c_star <= 0:
        raise ModelError("M and c_star must be positive")
    k = float(np.max(np.abs(np.asarray(v, dtype=float) - np.asarray(w, dtype=float))))
    if k == 0:
        raise ModelError("sites must differ")
    rate = c_star * M ** (2 * d * lam - delta_star * d) / k ** (delta_star * d)
    return -math.expm1(-rate)
