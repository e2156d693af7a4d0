"""Electrical networks: effective conductance, cutset bounds and reductions."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import cg

from .model import ModelError
from .sampler import Graph


class SolverError(RuntimeError):
    """The iterative solver did not reach the requested tolerance."""


class CutsetError(ModelError):
    """Cutsets overlap or fail to separate source from sinks."""


@dataclass(frozen=True)
class ElectricalNetwork:
    """Undirected multigraph with positive edge conductances."""

    n: int
    edges: np.ndarray
    conductances: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        c = np.asarray(self.conductances, dtype=float).reshape(-1)
        if e.shape[0] != c.shape[0]:
            raise ModelError("one conductance per edge is required")
        if c.size and not (np.all(c > 0) and np.all(np.isfinite(c))):
            raise ModelError("conductances must be positive and finite")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ModelError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ModelError("self-loops carry no current and are not allowed")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "conductances", c)
        if self.positions is not None:
            object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float).reshape(self.n, -1))

    @classmethod
    def from_graph(cls, graph: Graph, conductance: float = 1.0) -> "ElectricalNetwork":
        e = graph.edges
        return cls(graph.n, e, np.full(e.shape[0], float(conductance)), graph.points.positions)

    def weight_matrix(self) -> sparse.csr_matrix:
        e, c = self.edges, self.conductances
        w = sparse.coo_matrix((np.concatenate([c, c]), (np.concatenate([e[:, 0], e[:, 1]]),
                                                        np.concatenate([e[:, 1], e[:, 0]]))),
                              shape=(self.n, self.n))
        return w.tocsr()

    def laplacian(self) -> sparse.csr_matrix:
        w = self.weight_matrix()
        return (sparse.diags(np.asarray(w.sum(axis=1)).ravel()) - w).tocsr()


def _as_index_array(v) -> np.ndarray:
    return np.unique(np.atleast_1d(np.asarray(v, dtype=np.int64)))


def dirichlet_energy(net: ElectricalNetwork, potential: np.ndarray) -> float:
    e = net.edges
    return float(np.sum(net.conductances * (potential[e[:, 0]] - potential[e[:, 1]]) ** 2))


def solve_potential(net: ElectricalNetwork, source: int, sinks, rel_tol: float = 1e-10,
                    max_iter: int = 1_000_000) -> np.ndarray:
    """Harmonic potential equal to 1 at ``source`` and 0 at ``sinks``.

    Vertices outside the component of ``source`` get potential 0.
    """
    sinks = _as_index_array(sinks)
    if sinks.size == 0:
        raise ModelError("at least one sink is required")
    if source in set(sinks.tolist()):
        raise ModelError("source must not be a sink")
    if not (0 <= source < net.n and sinks.min() >= 0 and sinks.max() < net.n):
        raise ModelError("terminal out of range")
    w = net.weight_matrix()
    _, labels = csgraph.connected_components(w, directed=False)
    comp = np.flatnonzero(labels == labels[source])
    pot = np.zeros(net.n)
    pot[source] = 1.0
    is_sink = np.zeros(net.n, dtype=bool)
    is_sink[sinks] = True
    if not is_sink[comp].any():
        pot[comp] = 1.0
        return pot
    interior = comp[(comp != source) & ~is_sink[comp]]
    if interior.size == 0:
        return pot
    lap = net.laplacian()
    a = lap[interior][:, interior].tocsr()
    b = -np.asarray(lap[interior][:, [source]].todense()).ravel()
    diag = a.diagonal()
    precond = sparse.diags(1.0 / diag)
    x, info = cg(a, b, rtol=rel_tol, atol=0.0, maxiter=max_iter, M=precond)
    if info != 0:
        raise SolverError(f"conjugate gradients stopped without convergence (info={info})")
    resid = np.linalg.norm(a @ x - b)
    if resid > 10 * rel_tol * max(np.linalg.norm(b), 1e-300):
        raise SolverError(f"residual {resid:.3g} above tolerance")
    pot[interior] = x
    return pot


def effective_conductance(net: ElectricalNetwork, source: int, sinks, rel_tol: float = 1e-10,
                          max_iter: int = 1_000_000) -> float:
    """Effective conductance between ``source`` and the set ``sinks`` shorted together.

    Returns 0 when no sink shares a component with the source.  The value
    is the Dirichlet energy of the computed potential, whose error is
    quadratic in the solver error.
    """
    # without a reachable sink the potential is constant on the source component
    return dirichlet_energy(net, solve_potential(net, source, sinks, rel_tol, max_iter))


# ---------------------------------------------------------------------------
# cutsets


def _separates(net: ElectricalNetwork, removed: np.ndarray, source: int, sinks: np.ndarray) -> bool:
    keep = np.ones(net.edges.shape[0], dtype=bool)
    keep[removed] = False
    e = net.edges[keep]
    w = sparse.coo_matrix((np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(net.n, net.n))
    _, labels = csgraph.connected_components(w, directed=False)
    return not np.any(labels[sinks] == labels[source])


def nash_williams_bound(net: ElectricalNetwork, source: int, sinks, cutsets) -> float:
    """Upper bound ``(sum_k 1/C_k)**-1`` from disjoint cutsets.

    Each cutset is a collection of edge indices whose removal disconnects
    ``source`` from every sink.
    """
    sinks = _as_index_array(sinks)
    cutsets = [np.unique(np.asarray(c, dtype=np.int64)) for c in cutsets]
    if not cutsets:
        raise CutsetError("no cutsets given")
    allc = np.concatenate(cutsets)
    if np.unique(allc).size != allc.size:
        raise CutsetError("cutsets are not disjoint")
    if allc.size and (allc.min() < 0 or allc.max() >= net.edges.shape[0]):
        raise CutsetError("cutset refers to a missing edge")
    total = 0.0
    for k, cut in enumerate(cutsets):
        if not _separates(net, cut, source, sinks):
            raise CutsetError(f"cutset {k} does not separate the source from the sinks")
        cap = float(net.conductances[cut].sum())
        total += math.inf if cap == 0 else 1.0 / cap
    return 0.0 if math.isinf(total) else 1.0 / total


@dataclass(frozen=True)
class AnnularFamily:
    """Disjoint shell cutsets on a network in which long edges are split in series."""

    network: ElectricalNetwork
    source: int
    sinks: np.ndarray
    cutsets: list
    radii: np.ndarray


def annular_cutsets(net: ElectricalNetwork, source: int, radii) -> AnnularFamily:
    """Cutsets made of the edges crossing the spheres of the given radii around ``source``.

    An edge crossing ``m > 1`` spheres is replaced by ``m`` edges in series,
    each of conductance ``m c``, one per sphere.  This keeps every effective
    conductance between original vertices and makes the cutsets disjoint.
    """
    if net.positions is None:
        raise ModelError("network has no positions")
    radii = np.sort(np.asarray(radii, dtype=float))
    x = net.positions
    r = np.sqrt(np.sum((x - x[source]) ** 2, axis=1))
    if radii.size == 0 or radii[0] <= 0:
        raise ModelError("radii must be positive")
    e, c = net.edges, net.conductances
    ra, rb = r[e[:, 0]], r[e[:, 1]]
    inner, outer = np.minimum(ra, rb), np.maximum(ra, rb)
    crossed = (inner[:, None] < radii[None, :]) & (outer[:, None] >= radii[None, :])
    m = crossed.sum(axis=1)
    new_edges, new_c, cut_of = [], [], []
    extra_pos = []
    nxt = net.n
    for k in range(e.shape[0]):
        u, v = e[k]
        if m[k] <= 1:
            new_edges.append((u, v))
            new_c.append(c[k])
            cut_of.append(int(np.argmax(crossed[k])) if m[k] == 1 else -1)
            continue
        if ra[k] > rb[k]:
            u, v = v, u
        shells = np.flatnonzero(crossed[k])
        chain = [u]
        for q in range(len(shells) - 1):
            frac = (q + 1) / len(shells)
            extra_pos.append(x[u] + frac * (x[v] - x[u]))
            chain.append(nxt)
            nxt += 1
        chain.append(v)
        for q, shell in enumerate(shells):
            new_edges.append((chain[q], chain[q + 1]))
            new_c.append(c[k] * len(shells))
            cut_of.append(int(shell))
    pos = np.vstack([x] + extra_pos) if extra_pos else x
    out = ElectricalNetwork(nxt, np.array(new_edges, dtype=np.int64).reshape(-1, 2), np.array(new_c), pos)
    cut_of = np.array(cut_of)
    cutsets = [np.flatnonzero(cut_of == k) for k in range(radii.size)]
    sinks = np.flatnonzero(r >= radii[-1])
    return AnnularFamily(out, source, sinks, cutsets, radii)


# ---------------------------------------------------------------------------
# reductions


def collapse(net: ElectricalNetwork, groups) -> tuple[ElectricalNetwork, np.ndarray]:
    """Identify each group of vertices to a single vertex.

    Edges inside a group disappear and parallel edges are kept.  Returns the
    new network and the map from old to new vertex indices.
    """
    rep = np.arange(net.n)
    seen = np.zeros(net.n, dtype=bool)
    for g in groups:
        g = _as_index_array(g)
        if g.size == 0:
            continue
        if seen[g].any():
            raise ModelError("groups must be disjoint")
        seen[g] = True
        rep[g] = g.min()
    uniq, mapping = np.unique(rep, return_inverse=True)
    e = mapping[net.edges]
    keep = e[:, 0] != e[:, 1]
    pos = None if net.positions is None else net.positions[uniq]
    return ElectricalNetwork(uniq.size, np.sort(e[keep], axis=1), net.conductances[keep], pos), mapping


def reduce_series_parallel(net: ElectricalNetwork, terminals=()) -> tuple[ElectricalNetwork, np.ndarray]:
    """Merge parallel edges and remove non-terminal vertices of degree two.

    Effective conductances between surviving vertices are unchanged.  The
    returned map sends removed vertices to -1.
    """
    adj: dict[int, dict[int, float]] = defaultdict(dict)
    for (u, v), c in zip(net.edges.tolist(), net.conductances.tolist()):
        adj[u][v] = adj[u].get(v, 0.0) + c
        adj[v][u] = adj[v].get(u, 0.0) + c
    keep = set(int(t) for t in np.atleast_1d(terminals))
    alive = np.ones(net.n, dtype=bool)
    stack = [v for v in range(net.n) if len(adj[v]) == 2 and v not in keep]
    while stack:
        v = stack.pop()
        if not alive[v] or v in keep or len(adj[v]) != 2:
            continue
        (a, ca), (b, cb) = adj[v].items()
        series = ca * cb / (ca + cb)
        del adj[a][v], adj[b][v]
        adj[v].clear()
        alive[v] = False
        adj[a][b] = adj[a].get(b, 0.0) + series
        adj[b][a] = adj[b].get(a, 0.0) + series
        stack.extend(w for w in (a, b) if len(adj[w]) == 2 and w not in keep)
    mapping = np.full(net.n, -1, dtype=np.int64)
    mapping[alive] = np.arange(int(alive.sum()))
    edges, cond = [], []
    for u in range(net.n):
        if alive[u]:
            for v, c in adj[u].items():
                if u < v:
                    edges.append((mapping[u], mapping[v]))
                    cond.append(c)
    pos = None if net.positions is None else net.positions[alive]
    return ElectricalNetwork(int(alive.sum()), np.array(edges, dtype=np.int64).reshape(-1, 2),
                             np.array(cond), pos), mapping


# ---------------------------------------------------------------------------
# projection onto the square lattice


@dataclass(frozen=True)
class LatticeProjection:
    """Nearest-neighbour network on integer cells of the plane."""

    network: ElectricalNetwork
    cells: np.ndarray  # integer coordinates of every network vertex
    vertex_cell: np.ndarray  # network vertex holding each original vertex

    def bond_conductance(self) -> dict:
        out = {}
        for (u, v), c in zip(self.network.edges.tolist(), self.network.conductances.tolist()):
            a, b = tuple(self.cells[u]), tuple(self.cells[v])
            out[(min(a, b), max(a, b))] = c
        return out


def _l_path_bonds(x1, y1, x2, y2):
    """Unit bonds on the path (x1, y1) -> (x1, y2) -> (x2, y2)."""
    bonds = []
    step = 1 if y2 >= y1 else -1
    for y in range(y1, y2, step):
        bonds.append(((x1, y), (x1, y + step)))
    step = 1 if x2 >= x1 else -1
    for x in range(x1, x2, step):
        bonds.append(((x, y2), (x + step, y2)))
    return bonds


def project_to_lattice(graph: Graph | ElectricalNetwork) -> LatticeProjection:
    """Map a planar graph with unit conductances onto a nearest-neighbour lattice network.

    Vertices sharing a unit cell are glued.  Every edge between distinct
    cells adds one unit of conductance between those cells.  A resulting
    edge of conductance ``c`` between cells at lattice distance ``k > 1`` is
    replaced by adding ``c k`` to each bond of the L-shaped path that first
    moves along the second axis from the lexicographically smaller cell and
    then along the first.  Effective conductances can only increase.
    """
    if isinstance(graph, Graph):
        x, edges = graph.points.positions, graph.edges
        cond = np.ones(edges.shape[0])
    else:
        x, edges, cond = graph.positions, graph.edges, graph.conductances
    if x is None or x.shape[1] != 2:
        raise ModelError("lattice projection needs planar positions")
    cell = np.floor(x).astype(np.int64)
    ca, cb = cell[edges[:, 0]], cell[edges[:, 1]]
    differ = np.any(ca != cb, axis=1)
    ca, cb, w = ca[differ], cb[differ], cond[differ]
    swap = (ca[:, 0] > cb[:, 0]) | ((ca[:, 0] == cb[:, 0]) & (ca[:, 1] > cb[:, 1]))
    lo = np.where(swap[:, None], cb, ca)
    hi = np.where(swap[:, None], ca, cb)
    pairs, inv = np.unique(np.hstack([lo, hi]), axis=0, return_inverse=True)
    agg = np.bincount(inv.ravel(), weights=w, minlength=pairs.shape[0])

    bonds: dict = defaultdict(float)
    for (x1, y1, x2, y2), c in zip(pairs.tolist(), agg.tolist()):
        k = abs(x2 - x1) + abs(y2 - y1)
        if k == 1:
            bonds[((x1, y1), (x2, y2))] += c
            continue
        for a, b in _l_path_bonds(x1, y1, x2, y2):
            bonds[(min(a, b), max(a, b))] += c * k

    cells = {tuple(c) for c in np.unique(cell, axis=0).tolist()}
    for a, b in bonds:
        cells.add(a)
        cells.add(b)
    cell_list = sorted(cells)
    index = {c: i for i, c in enumerate(cell_list)}
    e = np.array([(index[a], index[b]) for a, b in bonds], dtype=np.int64).reshape(-1, 2)
    c = np.array(list(bonds.values()))
    coords = np.array(cell_list, dtype=np.int64).reshape(-1, 2)
    net = ElectricalNetwork(len(cell_list), e, c, coords.astype(float))
    vertex_cell = np.array([index[tuple(v)] for v in cell.tolist()], dtype=np.int64)
    return LatticeProjection(net, coords, vertex_cell)


def lattice_bond_pool(projection: LatticeProjection, lo, hi) -> np.ndarray:
    """Conductance of every nearest-neighbour bond with both cells in ``[lo, hi)**2`` (zeros included)."""
    lo, hi = int(lo), int(hi)
    table = projection.bond_conductance()
    out = []
    for xx in range(lo, hi):
        for yy in range(lo, hi):
            if xx + 1 < hi:
                out.append(table.get(((xx, yy), (xx + 1, yy)), 0.0))
            if yy + 1 < hi:
                out.append(table.get(((xx, yy), (xx, yy + 1)), 0.0))
    return np.array(out)


@dataclass(frozen=True)
class TailTable:
    n: np.ndarray
    survival: np.ndarray
    envelope: np.ndarray
    sigma: np.ndarray
    violations: np.ndarray
    c1: float
    samples: int


def fit_cauchy_scale(pool, n_max: int) -> float:
    """Smallest ``c1`` with empirical ``P(C > c1 n) <= 1/n`` for ``2 <= n <= n_max``."""
    pool = np.asarray(pool, dtype=float)
    ns = np.arange(2, n_max + 1)
    q = np.quantile(pool, 1 - 1 / ns, method="higher")
    return float(np.max(q / ns))


def conductance_tail(pool, c1: float, n_max: int, z: float = 4.0) -> TailTable:
    """Empirical survival ``P(C > c1 n)`` against ``1/n`` with binomial noise bands."""
    pool = np.asarray(pool, dtype=float)
    if pool.size == 0:
        raise ModelError("empty conductance sample")
    ns = np.arange(1, n_max + 1)
    srt = np.sort(pool)
    surv = 1 - np.searchsorted(srt, c1 * ns, side="right") / pool.size
    env = 1 / ns
    sigma = np.sqrt(env * (1 - env) / pool.size)
    return TailTable(ns, surv, env, sigma, surv - env > z * sigma, c1, pool.size)
