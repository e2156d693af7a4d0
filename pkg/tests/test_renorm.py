import math

import numpy as np
import pytest
from conftest import make_graph
from hypothesis import given, settings
from hypothesis import strategies as st

from wrcm import ModelError, ModelParams, Window, sample
from wrcm.renorm import (BoxLabel, classify_boxes, coarse_grain, communication_bound, connector_bound,
                         connector_exists, connector_frequency, connector_frequency_by_graph, epsilon_range,
                         order_stat_bounds, stage_sequences)

MIN = ModelParams(kernel="min", profile="polynomial", gamma=0.5, delta=3.0, beta=1.0, window=Window(40, 2))


def test_connector_bound_example():
    s = t = 0.01
    r, gamma, delta = 10.0, 0.5, 3.0
    b = (2 / (3 * math.pi)) ** 1.5  # polynomial cap for delta = 3, d = 2
    rho = lambda v: b if v <= b ** (-1 / delta) else v**-delta
    k = s**-gamma * rho(t**gamma * (s ** (-gamma / 2) + r) ** 2)
    q = 0.5 * rho(1.0) * math.pi * k
    res = connector_bound(([0, 0], s), ([r, 0], t), MIN)
    assert res.k_xy == pytest.approx(k, rel=1e-12)
    assert res.q == pytest.approx(q, rel=1e-12)
    assert res.lower_bound == pytest.approx(1 - math.exp(-q), rel=1e-12)
    assert 1e-4 < res.q < 1e-3


def test_connector_bound_monotone_and_symmetric():
    near = connector_bound(([0, 0], 0.02), ([0, 0], 0.3), MIN)
    far = connector_bound(([0, 0], 0.02), ([10, 0], 0.3), MIN)
    assert near.q >= far.q
    swapped = connector_bound(([10, 0], 0.3), ([0, 0], 0.02), MIN)
    assert swapped.q == far.q
    with pytest.raises(ModelError):
        connector_bound(([0, 0], 0.6), ([1, 0], 0.3), MIN)
    with pytest.raises(ModelError):
        connector_bound(([0, 0], 0.1), ([1, 0], 0.3), MIN.replace(kernel="pa"))


def test_connector_exists():
    tri = make_graph([(0, 1), (1, 2), (0, 2)], 3, marks=[0.1, 0.7, 0.2])
    assert connector_exists(tri, 0, 2)
    low = make_graph([(0, 1), (1, 2)], 3, marks=[0.1, 0.3, 0.2])
    assert not connector_exists(low, 0, 2)
    with pytest.raises(ModelError):
        connector_exists(tri, 1, 1)


@pytest.mark.parametrize("s,t,r", [(0.01, 0.01, 10.0), (0.05, 0.2, 3.0), (0.001, 0.4, 15.0)])
def test_connector_frequency_above_bound(s, t, r):
    freq = connector_frequency(MIN, s, t, r, 10_000, 1)
    q = connector_bound(([0, 0], s), ([r, 0], t), MIN)
    assert freq.frequency >= q.lower_bound - 4 * freq.sigma


def test_connector_frequency_routes_agree():
    params = MIN.replace(beta=5.0, window=Window(10, 2))
    a = connector_frequency(params, 0.05, 0.05, 2.0, 2000, 3)
    b = connector_frequency_by_graph(params, 0.05, 0.05, 2.0, 400, 4)
    assert 0.05 < a.frequency < 0.95
    assert abs(a.frequency - b.frequency) <= 4 * math.hypot(a.sigma, b.sigma)


def test_order_stat_examples():
    res = order_stat_bounds(5, 0.0, 0.5, 0.2, 0.5)
    assert res.exact_min_given_max == 1 and res.bound == 1
    assert res.exact_cond == pytest.approx(0.4)
    res = order_stat_bounds(1, 0.25, 0.5, 0.1, 0.2)
    assert res.exact_min_given_max == 0.5
    assert res.bound == pytest.approx(0.6065, abs=1e-4)
    with pytest.raises(ModelError):
        order_stat_bounds(3, 0.5, 0.4, 0.1, 0.2)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 500), st.floats(0, 1), st.floats(1e-6, 1))
def test_order_stat_exact_below_bound(n, frac, b):
    a = frac * b * (1 - 1e-12)
    res = order_stat_bounds(n, a, b, 0.1, 0.2)
    assert res.exact_min_given_max <= res.bound * (1 + 1e-12)


def test_order_stat_exact_by_simulation():
    rng = np.random.default_rng(0)
    u = rng.random((200_000, 4))
    keep = u.max(axis=1) < 0.8
    emp = np.mean(u[keep].min(axis=1) > 0.2)
    exact = order_stat_bounds(4, 0.2, 0.8, 0.1, 0.2).exact_min_given_max
    assert abs(emp - exact) < 4 * math.sqrt(exact * (1 - exact) / keep.sum())


def test_stage_sequence_arithmetic():
    seq = stage_sequences("min", 0.9, 2.5, 2, 1.0, 10, 1.0, 50, p_b=1.0)
    assert seq.C[0] == 14641 and seq.D[0] == 242
    assert np.all(np.diff(seq.log_u) < 0)
    assert np.all(np.diff(seq.C) > 0)
    assert np.all(np.diff(seq.partial_sums) > 0)
    assert 1 / seq.C[-1] < 1e-6
    # ratio test on the terms of the sum
    ratios = seq.C[:-1] / seq.C[1:]
    assert ratios[-1] < 1


def test_stage_sequence_min_kernel_closed_form():
    gamma, delta, d, beta, ns, eps = 0.9, 2.5, 2, 1.3, 4, 0.5
    seq = stage_sequences("min", gamma, delta, d, beta, ns, eps, 6, p_b=1.0)
    from wrcm.model import profile_constants, profile_value

    rho = float(profile_value(1 / beta, profile_constants("polynomial", delta, d)))
    c1 = (0.5 * math.pi * rho * beta ** (delta - 1) * d ** (-d * delta / 2)) ** (-1 / (gamma * (delta + 1)))
    e = gamma * (delta + 1)
    for n in range(1, 7):
        m = ns + n
        u = (1 / c1) * m ** (-eps / e) * 2 ** (-m * d * delta / (ns * e)) * (math.factorial(m) / math.factorial(ns)) ** (
            -2 * d * delta / e)
        assert seq.u[n - 1] == pytest.approx(u, rel=1e-10)


@pytest.mark.parametrize("kernel,gamma,delta", [("min", 0.9, 2.5), ("sum", 0.9, 2.5), ("pa", 0.95, 3.0),
                                                ("prod", 0.8, 3.0), ("max", 0.5, 3.0)])
def test_stage_sequences_per_kernel(kernel, gamma, delta):
    eps = 0.5 * epsilon_range(kernel, gamma, delta, 2)
    seq = stage_sequences(kernel, gamma, delta, 2, 1.0, 10, eps, 50, p_b=1.0)
    assert np.all(np.diff(seq.log_u) < 0)
    assert seq.via_min_kernel == (kernel in ("sum", "pa"))


def test_stage_sequence_monte_carlo_p_b():
    seq = stage_sequences("min", 0.9, 2.5, 2, 1.0, 1, 1.0, 5, replicas=20_000, seed=2)
    assert abs(seq.p_b - seq.p_b_exact) <= 4 * math.sqrt(seq.p_b_exact * (1 - seq.p_b_exact) / 20_000) + 1e-12


def test_stage_sequence_errors():
    with pytest.raises(ModelError):
        stage_sequences("min", 0.5, 2.5, 2, 1.0, 10, 0.1, 5)
    with pytest.raises(ModelError):
        stage_sequences("min", 0.9, 2.5, 2, 1.0, 10, 5.0, 5)
    with pytest.raises(ModelError):
        stage_sequences("prod", 0.4, 2.5, 2, 1.0, 10, 0.1, 5)
    with pytest.raises(ModelError):
        stage_sequences("plain", 0.0, 2.5, 2, 1.0, 10, 0.1, 5)


def test_boxes_all_good_and_one_bad():
    pos = np.array([[x, y] for x in np.arange(-40, 40, 7.0) for y in np.arange(-40, 40, 7.0)])
    g = make_graph([], len(pos), pos, marks=np.full(len(pos), 0.9))
    lab = classify_boxes(g, 2, 0.1)
    assert np.all(lab.labels == BoxLabel.GOOD)
    marks = np.full(len(pos), 0.9)
    k = len(pos) // 2
    marks[k] = 1e-9
    g = make_graph([(k, 0)], len(pos), pos, marks=marks)
    lab = classify_boxes(g, 2, 0.1)
    box = np.unravel_index(lab.box_of_vertex[k], lab.labels.shape)
    bad = np.argwhere(lab.labels == BoxLabel.BAD)
    assert len(bad) == 9
    assert np.all(np.abs(bad - np.array(box)).max(axis=1) <= 1)
    assert lab.labels.flat[lab.box_of_vertex[0]] == BoxLabel.IRREGULAR


def test_box_labels_deterministic_and_disjoint():
    g = sample(ModelParams(kernel="pa", gamma=0.3, delta=3.0, window=Window(45, 2)), 3)
    a, b = classify_boxes(g, 3, 0.5), classify_boxes(g, 3, 0.5)
    assert np.array_equal(a.labels, b.labels)
    assert sum(a.fractions.values()) == pytest.approx(1.0)
    with pytest.raises(ModelError):
        classify_boxes(g, 4, 0.5)


def test_bad_fraction_envelope():
    params = ModelParams(kernel="pa", gamma=0.3, delta=3.0, window=Window(60, 2))
    l, eps = 2, 0.05
    n_l = 3.0
    frac = np.array([classify_boxes(sample(params, s), l, eps).fraction(BoxLabel.BAD) for s in range(20)])
    envelope = (2 * l + 4) ** 2 * (n_l**2) ** -eps
    assert frac.mean() <= min(envelope, 1.0) + 4 * frac.std(ddof=1) / math.sqrt(frac.size)


def test_bad_fraction_matches_poisson_law():
    # exact tiling of the torus: a box is bad iff its 3x3 neighbourhood holds a low mark
    params = ModelParams(kernel="pa", gamma=0.3, delta=3.0, window=Window(60, 2))
    lab0 = classify_boxes(sample(params, 0), 2, 1.0)
    rate = 9 * lab0.side**2 * lab0.threshold
    frac = np.array([classify_boxes(sample(params, s), 2, 1.0).fraction(BoxLabel.BAD) for s in range(40)])
    expected = 1 - math.exp(-rate)
    assert abs(frac.mean() - expected) <= 4 * frac.std(ddof=1) / math.sqrt(frac.size)


def test_coarse_grain_trivial():
    pts = np.random.default_rng(0).uniform(-45, 45, (60, 2))
    empty = coarse_grain(make_graph([], 60, pts), 30, 0.5)
    assert not empty.occupied.any() and empty.bonds.shape[0] == 0
    # two complete 8-cliques in neighbouring boxes joined by one edge; 30**(2 * 0.3) rounds up to 8
    left = np.column_stack([np.linspace(-40, -35, 8), np.zeros(8)])
    mid = np.column_stack([np.linspace(-5, 5, 8), np.zeros(8)])
    clique = [(i, j) for i in range(8) for j in range(i + 1, 8)]
    edges = clique + [(8 + i, 8 + j) for i, j in clique] + [(0, 8)]
    cg = coarse_grain(make_graph(edges, 16, np.vstack([left, mid])), 30, 0.3)
    occ = np.flatnonzero(cg.occupied)
    assert len(occ) == 2
    assert cg.communicate[occ[0], occ[1]]
    assert [len(cg.occupying_sets[i]) for i in occ] == [8, 8]
    with pytest.raises(ModelError):
        coarse_grain(make_graph([], 60, pts), 40, 0.5)


def test_occupying_set_is_breadth_first_prefix():
    # star centred at vertex 2 plus a tail; only the first 4 in BFS order from vertex 0 are taken
    pos = np.column_stack([np.linspace(-10, 10, 6), np.zeros(6)])
    g = make_graph([(0, 2), (2, 1), (2, 3), (3, 4), (4, 5)], 6, pos)
    cg = coarse_grain(g, 30, math.log(4) / (2 * math.log(30)))
    centre = int(np.flatnonzero(np.all(cg.sites == 0, axis=1))[0])
    assert list(cg.occupying_sets[centre]) == [0, 2, 1, 3]


def test_coarse_grain_bonds_beat_communication_bound():
    # polynomial profile with delta = 1.5 caps every edge probability near 1e-3, so boxes must be large
    params = ModelParams(kernel="pa", profile="polynomial", gamma=0.5, delta=1.5, beta=1000.0,
                         window=Window(150, 2, "free"))
    M, lam = 50.0, 0.8
    pairs = {1: [], 2: []}
    for s in range(5):
        cg = coarse_grain(sample(params, s), M, lam)
        for i in range(len(cg.sites)):
            for j in range(i + 1, len(cg.sites)):
                if cg.occupied[i] and cg.occupied[j]:
                    k = int(np.abs(cg.sites[i] - cg.sites[j]).max())
                    pairs[k].append(cg.communicate[i, j])
    for k, hits in pairs.items():
        assert hits
        f = np.mean(hits)
        bound = communication_bound(M, lam, 1.5, 1.0, [0, 0], [k, 0], 2)
        assert f >= bound - 4 * math.sqrt(bound * (1 - bound) / len(hits))


def test_communication_bound():
    assert communication_bound(10, 0.9, 1.5, 1.0, [0, 0], [2, 1], 2) == pytest.approx(
        1 - math.exp(-(10**0.6) / 8), rel=1e-12)
    assert communication_bound(10, 0.9, 1.5, 1.0, [0, 0], [2, 1], 2) == pytest.approx(0.392, abs=5e-4)
    assert communication_bound(10, 0.9, 1.5, 1.0, [0, 0], [10**6, 0], 2) < 1e-10
    vals = [communication_bound(M, 0.9, 1.5, 1.0, [0, 0], [1, 0], 2) for M in (2, 10, 1e6)]
    assert vals[-1] > 1 - 1e-6 and vals[0] < vals[1] < vals[2]
    with pytest.raises(ModelError):
        communication_bound(10, 0.9, 2.5, 1.0, [0, 0], [1, 0], 2)
    with pytest.raises(ModelError):
        communication_bound(10, 0.9, 1.5, 1.0, [0, 0], [0, 0], 2)
