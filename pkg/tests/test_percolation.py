import numpy as np
import pytest
from conftest import make_graph
from hypothesis import given, settings
from hypothesis import strategies as st

from wrcm import ModelError, ModelParams, Window
from wrcm.percolation import (BetaSearchError, CoupledReplicas, clopper_pearson, estimate_beta_c, estimate_theta,
                              reaches, theta_curve)


def test_reaches():
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [6.0, 0.0], [-9.0, 0.0]])
    g = make_graph([(0, 1), (1, 2)], 4, pts, palm=0)
    assert reaches(g, 6.0)
    assert not reaches(g, 6.5)
    with pytest.raises(ModelError):
        reaches(make_graph([], 2), 1.0)


def test_theta_extremes():
    tiny = ModelParams(kernel="pa", gamma=0.3, beta=1e-9, window=Window(20, 2))
    assert estimate_theta(tiny, 5, 20, 0).theta == 0.0
    dense = ModelParams(kernel="plain", profile="indicator", beta=1e6, window=Window(20, 2))
    est = estimate_theta(dense, 5, 20, 0)
    assert est.theta == 1.0 and est.ci[0] <= 1.0 <= est.ci[1]


def test_theta_is_deterministic_and_in_its_interval():
    p = ModelParams(kernel="pa", gamma=0.5, beta=1.0, window=Window(20, 2))
    a, b = estimate_theta(p, 6, 30, 4), estimate_theta(p, 6, 30, 4)
    assert a == b
    assert a.ci[0] <= a.theta <= a.ci[1]
    with pytest.raises(ModelError):
        estimate_theta(p, 11, 3, 0)


def test_robust_regime_percolates_at_small_beta():
    p = ModelParams(kernel="pa", profile="polynomial", gamma=0.8, delta=3.0, beta=0.05, window=Window(44, 2))
    assert estimate_theta(p, 20, 100, 1).theta > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 200), st.floats(0.5, 0.99))
def test_clopper_pearson_contains_estimate(n_seed, n, level):
    k = n_seed % (n + 1)
    lo, hi = clopper_pearson(k, n, level)
    assert 0 <= lo <= k / n <= hi <= 1


def test_coupled_curve_is_monotone_per_replica():
    p = ModelParams(kernel="pa", gamma=0.5, beta=2.0, window=Window(24, 2))
    coupled = CoupledReplicas(p, 8, 40, 3)
    betas = np.linspace(0.05, 2.0, 12)
    hits = np.array([coupled.hits(b) for b in betas])
    assert np.all(np.diff(hits.astype(int), axis=0) >= 0)
    curve = theta_curve(p, 8, betas, 40, 3)
    assert np.all(np.diff(curve) >= 0)


def test_beta_c_plain_kernel_positive():
    p = ModelParams(kernel="plain", profile="polynomial", delta=3.0, window=Window(30, 2))
    iv = estimate_beta_c(p, 10, 40, 0.05, 8.0, 0.05, 0)
    assert 0 < iv.lo < iv.hi and iv.hi - iv.lo <= 0.05
    assert iv.theta_lo < 0.5 <= iv.theta_hi


def test_beta_c_errors():
    p = ModelParams(kernel="plain", window=Window(20, 2))
    with pytest.raises(ModelError):
        estimate_beta_c(p, 5, 5, 1.0, 1.0, 0.1, 0)
    with pytest.raises(BetaSearchError):
        estimate_beta_c(p, 5, 5, 1e-6, 2e-6, 1e-7, 0)
