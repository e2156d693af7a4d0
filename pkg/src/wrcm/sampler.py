"""Sampling marked Poisson points and the random connection graph on them.

Edge randomness
---------------
All vertex pairs are partitioned into blocks.  A block is a pair of cells
of a dyadic grid hierarchy, restricted to two dyadic mark layers.  Inside a
block with ``m`` pairs, the ``m`` edge uniforms are generated in increasing
order (Renyi representation of order statistics) and placed on the pairs by
a keyed Feistel permutation of ``range(m)``.  Both the values and their
placement depend only on the seed and the block key.

The naive method walks through all ``m`` order statistics of every block.
The cell method stops as soon as the running order statistic exceeds an
upper bound for the connection probability inside the block, so it reads
exactly the same uniforms for every pair that could become an edge.  The
two methods therefore return identical edge sets.  Since the block
structure does not involve ``beta``, graphs built from the same points and
seed are nested in ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from numba import njit, uint64
from scipy import sparse

from .model import KERNEL_CODE, PROFILE_CODE, Geometry, ModelError, ModelParams, Window, kernel_value
from .rng import TAG_EDGES, TAG_PALM, TAG_POINTS, TAG_THIN, combine, generator, keyed_uniform, pair_uniforms

CAPACITY = 10_000_000


class CapacityError(RuntimeError):
    """Requested configuration is larger than the sampler accepts."""


class Method(str, Enum):
    NAIVE = "naive"
    CELL = "cell"


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MarkedPointSet:
    positions: np.ndarray
    marks: np.ndarray
    window: Window
    palm: int | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, self.window.d)
        marks = np.asarray(self.marks, dtype=float).reshape(-1)
        if pos.shape[0] != marks.shape[0]:
            raise ModelError("positions and marks have different lengths")
        if marks.size and not (np.all(marks > 0) and np.all(marks < 1)):
            raise ModelError("marks must lie in the open interval (0, 1)")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "marks", _frozen(marks))

    def __len__(self):
        return self.marks.shape[0]

    @property
    def d(self) -> int:
        return self.window.d


def _check_capacity(expected: float):
    if expected > CAPACITY:
        raise CapacityError(f"expected {expected:.3g} points exceeds capacity {CAPACITY:.0e}")


def sample_points(params: ModelParams | Window, seed: int) -> MarkedPointSet:
    """Poisson process of unit intensity on the window with uniform marks."""
    window = params.window if isinstance(params, ModelParams) else params
    _check_capacity(window.volume)
    rng = generator(seed, TAG_POINTS)
    n = int(rng.poisson(window.volume))
    half = window.side / 2
    pos = rng.random((n, window.d)) * window.side - half
    np.minimum(pos, np.nextafter(half, -math.inf), out=pos)
    marks = rng.random(n)
    while np.any(marks == 0.0):
        bad = marks == 0.0
        marks[bad] = rng.random(int(bad.sum()))
    return MarkedPointSet(pos, marks, window)


def add_palm_origin(points: MarkedPointSet, seed: int) -> MarkedPointSet:
    """Append a vertex at the origin with a fresh uniform mark."""
    if points.palm is not None:
        raise ModelError("point set already carries a Palm vertex")
    rng = generator(seed, TAG_PALM)
    mark = 0.0
    while mark == 0.0:
        mark = rng.random()
    pos = np.vstack([points.positions, np.zeros((1, points.d))])
    marks = np.append(points.marks, mark)
    return MarkedPointSet(pos, marks, points.window, palm=len(points))


# --------------------------------------------------------------------------
# compiled helpers


@njit(cache=True)
def _kernel(code, s, t, gamma, d):
    lo = min(s, t)
    hi = max(s, t)
    if code == 0:
        return 1.0
    if code == 1:
        return (s ** (-gamma / d) + t ** (-gamma / d)) ** (-float(d))
    if code == 2:
        return lo**gamma
    if code == 3:
        return hi ** (1.0 + gamma)
    if code == 4:
        return s**gamma * t**gamma
    return hi ** (1.0 - gamma) * lo**gamma


@njit(cache=True)
def _profile(pcode, z, cap, thresh, delta):
    if z <= thresh:
        return cap
    if pcode == 0:
        return 0.0
    return z ** (-delta)


@njit(cache=True)
def _pair_prob(pos, marks, i, j, side, torus, kcode, pcode, beta, gamma, cap, thresh, delta):
    d = pos.shape[1]
    r2 = 0.0
    for a in range(d):
        diff = abs(pos[i, a] - pos[j, a])
        if torus and diff > side - diff:
            diff = side - diff
        r2 += diff * diff
    r = math.sqrt(r2)
    g = _kernel(kcode, marks[i], marks[j], gamma, d) / beta
    return _profile(pcode, g * r**d, cap, thresh, delta)


@njit(cache=True)
def _pair_probs(pos, marks, ii, jj, side, torus, kcode, pcode, beta, gamma, cap, thresh, delta):
    out = np.empty(ii.shape[0])
    for k in range(ii.shape[0]):
        out[k] = _pair_prob(pos, marks, ii[k], jj[k], side, torus, kcode, pcode, beta, gamma, cap, thresh, delta)
    return out


@njit(cache=True)
def _morton(coords, bits):
    d = coords.shape[0]
    code = uint64(0)
    for b in range(bits - 1, -1, -1):
        for a in range(d):
            code = (code << uint64(1)) | ((uint64(coords[a]) >> uint64(b)) & uint64(1))
    return code


@njit(cache=True)
def _unmorton(code, bits, d, out):
    for a in range(d):
        out[a] = 0
    for b in range(bits):
        for a in range(d - 1, -1, -1):
            out[a] |= int((code & uint64(1)) << uint64(b))
            code = code >> uint64(1)


@njit(cache=True)
def _feistel(key, x, m):
    """Keyed bijection of ``range(m)`` (Feistel network with cycle walking)."""
    bits = 2
    while (uint64(1) << uint64(bits)) < uint64(m):
        bits += 2
    half = uint64(bits // 2)
    mask = (uint64(1) << half) - uint64(1)
    y = uint64(x)
    while True:
        left = y >> half
        right = y & mask
        for rnd in range(4):
            f = combine(combine(key, 0xFE157E1 + rnd), right) & mask
            left, right = right, left ^ f
        y = (left << half) | right
        if y < uint64(m):
            return int(y)


@njit(cache=True)
def _tri_pair(pos):
    q = int((1.0 + math.sqrt(1.0 + 8.0 * pos)) / 2.0)
    while q * (q - 1) // 2 > pos:
        q -= 1
    while (q + 1) * q // 2 <= pos:
        q += 1
    return pos - q * (q - 1) // 2, q


@njit(cache=True)
def _axis_dist(i, j, k, torus):
    diff = abs(i - j)
    if torus and k - diff < diff:
        diff = k - diff
    return diff


@njit(cache=True)
def _axis_options(c, k, torus, out):
    """Distinct neighbours of index ``c`` (itself included) on an axis of length ``k``."""
    n = 0
    for off in (-1, 0, 1):
        v = c + off
        if torus:
            v = v % k
        elif v < 0 or v >= k:
            continue
        dup = False
        for q in range(n):
            if out[q] == v:
                dup = True
        if not dup:
            out[n] = v
            n += 1
    return n


@njit(cache=True)
def _find(prefixes, off, cnt, code):
    lo = off
    hi = off + cnt
    while lo < hi:
        mid = (lo + hi) // 2
        if prefixes[mid] < code:
            lo = mid + 1
        else:
            hi = mid
    if lo < off + cnt and prefixes[lo] == code:
        return lo
    return -1


@njit(cache=True)
def _grow(buf, n):
    if n < buf.shape[0]:
        return buf
    new = np.empty(buf.shape[0] * 2, dtype=buf.dtype)
    new[: buf.shape[0]] = buf
    return new


@njit(cache=True)
def _run_blocks(
    pos, marks, order, layer_start, cell_prefix, cell_start, cell_end, cell_min, table_off, table_cnt,
    lstar, counts, lmax, side, torus, kcode, pcode, beta, gamma, cap, thresh, delta, seed, naive,
):
    d = pos.shape[1]
    nlayers = counts.shape[0]
    ei = np.empty(1024, dtype=np.int64)
    ej = np.empty(1024, dtype=np.int64)
    eu = np.empty(1024)
    ne = 0
    ca = np.empty(d, dtype=np.int64)
    cb = np.empty(d, dtype=np.int64)
    par = np.empty(d, dtype=np.int64)
    opts = np.empty((d, 6), dtype=np.int64)
    nopt = np.empty(d, dtype=np.int64)
    tmp = np.empty(3, dtype=np.int64)
    idx = np.empty(d, dtype=np.int64)
    key0 = combine(seed, TAG_EDGES)
    for la in range(nlayers):
        for lb in range(la, nlayers):
            if counts[la] == 0 or counts[lb] == 0:
                continue
            ls = lstar[la, lb]
            # drive the enumeration from the sparser layer
            drv = la if counts[la] <= counts[lb] else lb
            oth = lb if drv == la else la
            lo_level = 1 if ls > 0 else 0
            for level in range(lo_level, ls + 1):
                k = 1 << level
                h = side / k
                toff = table_off[drv, level]
                tcnt = table_cnt[drv, level]
                ooff = table_off[oth, level]
                ocnt = table_cnt[oth, level]
                for ci in range(toff, toff + tcnt):
                    _unmorton(cell_prefix[ci], level, d, ca)
                    for phase in range(2):
                        # phase 0: separated pairs with adjacent parents; phase 1: adjacent pairs at lstar
                        if phase == 0 and level == 0:
                            continue
                        if phase == 1 and level != ls:
                            continue
                        if phase == 0:
                            for a in range(d):
                                par[a] = ca[a] >> 1
                                npar = _axis_options(par[a], k >> 1, torus, tmp)
                                n = 0
                                for q in range(npar):
                                    for child in range(2):
                                        opts[a, n] = 2 * tmp[q] + child
                                        n += 1
                                nopt[a] = n
                        else:
                            for a in range(d):
                                n = _axis_options(ca[a], k, torus, tmp)
                                for q in range(n):
                                    opts[a, q] = tmp[q]
                                nopt[a] = n
                        total = 1
                        for a in range(d):
                            total *= nopt[a]
                        for combo in range(total):
                            rem = combo
                            for a in range(d):
                                idx[a] = rem % nopt[a]
                                rem //= nopt[a]
                                cb[a] = opts[a, idx[a]]
                            maxd = 0
                            gap2 = 0.0
                            for a in range(d):
                                dd = _axis_dist(ca[a], cb[a], k, torus)
                                if dd > maxd:
                                    maxd = dd
                                if dd > 1:
                                    gap2 += ((dd - 1) * h) ** 2
                            if phase == 0 and maxd < 2:
                                continue
                            if phase == 1 and maxd > 1:
                                continue
                            bcode = _morton(cb, level)
                            acode = cell_prefix[ci]
                            if la == lb and bcode < acode:
                                continue
                            cj = _find(cell_prefix, ooff, ocnt, bcode)
                            if cj < 0:
                                continue
                            # orient the block canonically: first side is layer la
                            if drv == la:
                                c1 = ci
                                c2 = cj
                            else:
                                c1 = cj
                                c2 = ci
                            same = la == lb and bcode == acode
                            n1 = cell_end[c1] - cell_start[c1]
                            n2 = cell_end[c2] - cell_start[c2]
                            if same:
                                m = n1 * (n1 - 1) // 2
                            else:
                                m = n1 * n2
                            if m == 0:
                                continue
                            if naive:
                                pbar = 1.0
                            else:
                                dmin = math.sqrt(gap2) * (1.0 - 1e-9)
                                g = _kernel(kcode, cell_min[c1], cell_min[c2], gamma, d) / beta
                                pbar = _profile(pcode, g * dmin**d * (1.0 - 1e-9), cap, thresh, delta)
                                if pbar <= 0.0:
                                    continue
                            key = combine(combine(combine(combine(key0, la * 64 + lb), level), cell_prefix[c1]),
                                          cell_prefix[c2])
                            s = 0.0
                            for r in range(m):
                                v = keyed_uniform(key, r)
                                s += -math.log(v) / (m - r)
                                u = -math.expm1(-s)
                                if u > pbar:
                                    break
                                p = _feistel(key, r, m)
                                if same:
                                    p1, p2 = _tri_pair(p)
                                else:
                                    p1 = p // n2
                                    p2 = p % n2
                                vi = order[layer_start[la] + cell_start[c1] + p1]
                                vj = order[layer_start[lb] + cell_start[c2] + p2]
                                phi = _pair_prob(pos, marks, vi, vj, side, torus, kcode, pcode, beta, gamma,
                                                 cap, thresh, delta)
                                if u <= phi:
                                    ei = _grow(ei, ne)
                                    ej = _grow(ej, ne)
                                    eu = _grow(eu, ne)
                                    ei[ne] = min(vi, vj)
                                    ej[ne] = max(vi, vj)
                                    eu[ne] = u
                                    ne += 1
    return ei[:ne], ej[:ne], eu[:ne]


# --------------------------------------------------------------------------
# block plan


@dataclass(frozen=True)
class BlockPlan:
    """Partition of all vertex pairs into blocks; independent of ``beta``."""

    order: np.ndarray
    layer_start: np.ndarray
    cell_prefix: np.ndarray
    cell_start: np.ndarray
    cell_end: np.ndarray
    cell_min: np.ndarray
    table_off: np.ndarray
    table_cnt: np.ndarray
    lstar: np.ndarray
    counts: np.ndarray
    lmax: int


def _finest_level(window: Window) -> int:
    lmax = max(0, math.ceil(math.log2(window.side)))
    if lmax * window.d > 62:
        raise CapacityError("window too large for the cell hierarchy")
    return lmax


def build_plan(points: MarkedPointSet, kernel, gamma: float) -> BlockPlan:
    window = points.window
    d = window.d
    n = len(points)
    lmax = _finest_level(window)
    k = 1 << lmax
    h = window.side / k
    cells = np.floor((points.positions + window.side / 2) / h).astype(np.int64)
    np.clip(cells, 0, k - 1, out=cells)
    codes = np.zeros(n, dtype=np.uint64)
    for b in range(lmax - 1, -1, -1):
        for a in range(d):
            codes = (codes << np.uint64(1)) | ((cells[:, a] >> b) & 1).astype(np.uint64)

    nlayers = max(1, math.ceil(math.log2(n + 1)) + 1)
    layers = np.minimum(np.floor(-np.log2(points.marks)).astype(np.int64), nlayers - 1)
    order = np.lexsort((np.arange(n), codes, layers)).astype(np.int64)
    counts = np.bincount(layers, minlength=nlayers).astype(np.int64)
    layer_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    prefixes, starts, ends, mins = [], [], [], []
    table_off = np.zeros((nlayers, lmax + 1), dtype=np.int64)
    table_cnt = np.zeros((nlayers, lmax + 1), dtype=np.int64)
    offset = 0
    layer_min = np.ones(nlayers)
    for la in range(nlayers):
        sel = order[layer_start[la] : layer_start[la + 1]]
        lc = codes[sel]
        lm = points.marks[sel]
        if sel.size:
            layer_min[la] = lm.min()
        for level in range(lmax + 1):
            pre = lc >> np.uint64(d * (lmax - level))
            if pre.size:
                uniq, first = np.unique(pre, return_index=True)
                last = np.append(first[1:], pre.size)
                cmin = np.minimum.reduceat(lm, first)
            else:
                uniq = np.zeros(0, dtype=np.uint64)
                first = last = np.zeros(0, dtype=np.int64)
                cmin = np.zeros(0)
            table_off[la, level] = offset
            table_cnt[la, level] = uniq.size
            offset += uniq.size
            prefixes.append(uniq)
            starts.append(first)
            ends.append(last)
            mins.append(cmin)

    # level at which a layer pair is treated with all-pairs blocks
    lower = 2.0 ** -(np.arange(nlayers) + 1.0)
    if counts[-1]:
        lower[-1] = layer_min[-1]
    gshape = kernel_value(kernel, lower[:, None], lower[None, :], gamma, 1.0, d)
    with np.errstate(divide="ignore"):
        lstar = np.floor(np.log2(window.side * gshape ** (1.0 / d)))
    lstar = np.clip(np.nan_to_num(lstar, nan=0.0, neginf=0.0), 0, lmax).astype(np.int64)

    return BlockPlan(
        order=order,
        layer_start=layer_start,
        cell_prefix=np.concatenate(prefixes).astype(np.uint64),
        cell_start=np.concatenate(starts).astype(np.int64),
        cell_end=np.concatenate(ends).astype(np.int64),
        cell_min=np.concatenate(mins).astype(float),
        table_off=table_off,
        table_cnt=table_cnt,
        lstar=lstar,
        counts=counts,
        lmax=lmax,
    )


def _model_args(params: ModelParams):
    c = params.constants
    return (
        float(params.window.side),
        params.window.geometry is Geometry.TORUS,
        KERNEL_CODE[params.kernel],
        PROFILE_CODE[params.profile],
        float(params.beta),
        float(params.gamma),
        float(c.cap),
        float(c.threshold),
        float(c.delta),
    )


def run_plan(plan: BlockPlan, points: MarkedPointSet, params: ModelParams, seed: int, method=Method.CELL):
    """Edges ``(i, j)`` with ``i < j`` in lexicographic order, and their uniforms."""
    if len(points) < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    naive = Method(method) is Method.NAIVE
    ei, ej, eu = _run_blocks(
        points.positions, points.marks, plan.order, plan.layer_start, plan.cell_prefix, plan.cell_start,
        plan.cell_end, plan.cell_min, plan.table_off, plan.table_cnt, plan.lstar, plan.counts, plan.lmax,
        *_model_args(params), np.uint64(seed & 0xFFFFFFFFFFFFFFFF), naive,
    )
    srt = np.lexsort((ej, ei))
    return np.stack([ei[srt], ej[srt]], axis=1), eu[srt]


def pair_probabilities(points: MarkedPointSet, params: ModelParams, i, j):
    """Connection probabilities for the vertex pairs ``(i[k], j[k])``."""
    i = np.ascontiguousarray(i, dtype=np.int64)
    j = np.ascontiguousarray(j, dtype=np.int64)
    return _pair_probs(points.positions, points.marks, i, j, *_model_args(params))


# --------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on a marked point set.

    ``edge_marks`` holds the uniform that decided each edge; an edge is
    present exactly when its uniform is at most the connection probability.
    """

    points: MarkedPointSet
    params: ModelParams
    edges: np.ndarray
    edge_marks: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", _frozen(e))
        if self.edge_marks is not None:
            object.__setattr__(self, "edge_marks", _frozen(np.asarray(self.edge_marks, dtype=float)))

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def palm(self):
        return self.points.palm

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        data = np.ones(2 * e.shape[0], dtype=np.int8)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def neighbours(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v] : a.indptr[v + 1]]

    def edge_set(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.edges.tolist()))


def sample_graph(points: MarkedPointSet, params: ModelParams, seed: int, method: Method | str = Method.CELL,
                 plan: BlockPlan | None = None) -> Graph:
    """Random connection graph on ``points``.

    Both methods give the same edge set for the same seed; the naive one
    touches every pair and is meant for small inputs and cross-checks.
    """
    if points.window != params.window:
        raise ModelError("point set and parameters use different windows")
    if plan is None:
        plan = build_plan(points, params.kernel, params.gamma)
    edges, marks = run_plan(plan, points, params, seed, method)
    return Graph(points, params, edges, marks, seed)


def sample(params: ModelParams, seed: int, palm: bool = False, method: Method | str = Method.CELL) -> Graph:
    """Points and graph from one seed; optionally with a Palm vertex at the origin."""
    pts = sample_points(params, seed)
    if palm:
        pts = add_palm_origin(pts, seed)
    return sample_graph(pts, params, seed, method)


def thin_edges(graph: Graph, q: float, seed: int) -> Graph:
    """Keep every edge independently with probability ``q``."""
    if not 0 <= q <= 1:
        raise ModelError(f"retention probability must lie in [0, 1], got {q}")
    e = graph.edges
    u = pair_uniforms(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), TAG_THIN, e[:, 0], e[:, 1])
    keep = u < q
    marks = None if graph.edge_marks is None else graph.edge_marks[keep]
    return Graph(graph.points, graph.params, e[keep], marks, graph.seed)


def restrict_to_beta(graph: Graph, beta: float) -> Graph:
    """The coupled graph at a smaller ``beta`` on the same points and uniforms."""
    if graph.edge_marks is None:
        raise ModelError("graph carries no edge uniforms")
    if beta > graph.params.beta:
        raise ModelError("can only restrict to a smaller beta")
    params = graph.params.replace(beta=beta)
    e = graph.edges
    phi = pair_probabilities(graph.points, params, e[:, 0], e[:, 1])
    keep = graph.edge_marks <= phi
    return Graph(graph.points, params, e[keep], graph.edge_marks[keep], graph.seed)
