import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from wrcm import ModelError
from wrcm.criteria import (Phase, cropping_check, gamma_condition, kappa_exponent, kappa_reference,
                           log_mark_integral, log_scale_sequence, pair_connection_prob, phase_classify,
                           scale_sequence_bounds)
from wrcm.model import kernel_value, profile_constants, profile_value

KERNELS = ["plain", "sum", "min", "max", "prod", "pa"]


def riemann(kernel, gamma, delta, beta, d, r, profile="polynomial", n=1000):
    """Midpoint rule on an ``n x n`` grid of the unit mark square."""
    c = profile_constants(profile, delta, d)
    m = (np.arange(n) + 0.5) / n
    s, t = np.meshgrid(m, m, indexing="ij")
    return float(profile_value(kernel_value(kernel, s, t, gamma, beta, d) * r**d, c).mean())


RIEMANN_POINTS = [
    ("plain", 0.0, 3.0, 1.0, 2, 1.5),
    ("pa", 0.3, 3.0, 1.0, 2, 2.0),
    ("pa", 0.6, 2.5, 2.0, 2, 3.0),
    ("pa", 0.5, 3.0, 1.0, 1, 4.0),
    ("min", 0.4, 3.0, 1.0, 2, 2.0),
    ("prod", 0.3, 2.5, 1.0, 1, 2.0),
    ("prod", 0.6, 3.0, 1.0, 2, 5.0),
    ("sum", 0.4, 3.0, 1.0, 2, 6.0),
    ("sum", 0.7, 2.5, 1.5, 2, 8.0),
    ("max", 0.5, 3.0, 1.0, 2, 3.0),
    ("max", 0.3, 2.0, 2.0, 1, 10.0),
]


@pytest.mark.parametrize("point", RIEMANN_POINTS)
def test_pair_prob_matches_riemann_grid(point):
    assert abs(pair_connection_prob(*point) - riemann(*point)) < 1e-6


def test_pair_prob_slow_riemann_convergence():
    # a steep mark singularity: the grid needs more points to get close
    point = ("min", 0.2, 4.0, 0.5, 3, 1.5)
    exact = pair_connection_prob(*point)
    assert abs(exact - riemann(*point, n=500)) > 1e-5
    assert abs(exact - riemann(*point, n=4000)) < 1e-6


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("profile", ["indicator", "polynomial"])
def test_pair_prob_in_unit_interval_and_decreasing(kernel, profile):
    gamma = 0.6 if kernel == "max" else 0.4
    r = np.geomspace(0.05, 200, 25)
    p = np.array([pair_connection_prob(kernel, gamma, 2.5, 1.3, 2, x, profile) for x in r])
    assert np.all((p >= 0) & (p <= 1))
    assert np.all(np.diff(p) <= 1e-12)


@pytest.mark.parametrize("profile", ["indicator", "polynomial"])
def test_plain_pair_prob_is_profile(profile):
    c = profile_constants(profile, 3.0, 2)
    for r in (0.1, 0.5, 1.0, 3.0, 40.0):
        assert pair_connection_prob("plain", 0.0, 3.0, 2.0, 2, r, profile) == pytest.approx(
            float(profile_value(r**2 / 2.0, c)), rel=1e-12, abs=1e-300)


def test_pa_pair_prob_decays_like_r_to_minus_2d():
    r = np.array([10.0, 1e2, 1e3, 1e4, 1e5])
    scaled = np.array([x**4 * pair_connection_prob("pa", 0.4, 3.0, 1.0, 2, x) for x in r])
    assert np.all(np.isfinite(scaled))
    # r**4 pi(r) settles to a constant; the correction is of relative order 1/r
    steps = np.abs(np.diff(scaled))
    assert np.all(steps[1:] < 0.2 * steps[:-1])


def test_min_indicator_closed_form():
    # indicator profile in d = 2: connected iff min(s, t)**gamma * r**2 <= beta / pi
    gamma, r = 0.5, 2.5
    c = (1 / (math.pi * r**2)) ** (1 / gamma)
    exact = 1 - (1 - c) ** 2
    assert pair_connection_prob("min", gamma, 3.0, 1.0, 2, r, "indicator") == pytest.approx(exact, rel=1e-9)


@pytest.mark.parametrize("kernel", ["pa", "prod", "sum", "min"])
def test_log_mark_integral_against_dblquad(kernel):
    gamma, delta, d, beta, loga = 0.35, 2.5, 2, 1.2, math.log(40.0)
    c = profile_constants("polynomial", delta, d)
    f = lambda t, s: float(profile_value(kernel_value(kernel, s, t, gamma, beta, d) * 40.0, c))
    lo, hi = 1e-3, 0.7
    below, _ = integrate.dblquad(f, lo, hi, lo, lambda s: s, epsabs=1e-12, epsrel=1e-9)
    above, _ = integrate.dblquad(f, lo, hi, lambda s: s, hi, epsabs=1e-12, epsrel=1e-9)
    got = math.exp(log_mark_integral(kernel, gamma, delta, d, beta, "polynomial", loga,
                                     math.log(lo), math.log(hi), math.log(lo), math.log(hi)))
    assert got == pytest.approx(below + above, rel=1e-7)


def test_pair_prob_rejects_negative_distance():
    with pytest.raises(ModelError):
        pair_connection_prob("pa", 0.3, 3.0, 1.0, 2, -1.0)


@pytest.mark.parametrize("gamma", [0.1, 0.3, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("delta", [1.5, 2.5, 3.0, 4.0, 6.0])
def test_kappa_min_kernel_oracle(gamma, delta):
    res = kappa_exponent("min", gamma, delta, 2)
    assert abs(res.limit - kappa_reference("min", gamma, delta)) < 0.1


@pytest.mark.parametrize("gamma,delta", [(0.4, 3.0), (0.2, 2.5), (0.5, 2.0), (0.6, 4.0)])
def test_kappa_pa_is_two(gamma, delta):
    assert kappa_exponent("pa", gamma, delta, 2).limit == pytest.approx(2.0, abs=0.05)


@pytest.mark.parametrize("delta", [1.5, 2.5, 4.0])
def test_kappa_plain_is_delta(delta):
    assert kappa_exponent("plain", 0.0, delta, 2).limit == pytest.approx(delta, abs=0.05)


def test_kappa_examples_and_errors():
    assert kappa_exponent("min", 0.8, 3.0, 2).limit == pytest.approx(1.6, abs=0.05)
    res = kappa_exponent("pa", 0.4, 3.0, 2)
    assert res.ratios.shape == res.n.shape
    with pytest.raises(ModelError):
        kappa_exponent("pa", 0.4, 3.0, 2, n_grid=[0.5, 2, 4])


@pytest.mark.parametrize("kernel,gamma,value,passes", [
    ("prod", 0.4, 0.8, True),
    ("pa", 0.3, 1.0, False),
    ("pa", 0.9, 1.0, False),
    ("plain", 0.0, 0.0, True),
    ("min", 0.7, 0.7, True),
    ("sum", 0.2, 0.2, True),
    ("max", 0.5, 1.5, False),
    ("prod", 0.6, 1.2, False),
])
def test_gamma_condition(kernel, gamma, value, passes):
    res = gamma_condition(kernel, gamma)
    assert res.value == pytest.approx(value) and res.passes is passes


def test_gamma_condition_matches_diagonal_decay():
    s = 1e-200
    for kernel, gamma in [("min", 0.3), ("sum", 0.3), ("prod", 0.3), ("pa", 0.3), ("max", 0.3)]:
        slope = math.log(kernel_value(kernel, s, s, gamma, 1.0, 2) / kernel_value(kernel, 1e-100, 1e-100, gamma, 1.0, 2))
        slope /= math.log(s / 1e-100)
        assert slope == pytest.approx(gamma_condition(kernel, gamma).value, abs=1e-9)


def test_scale_sequence():
    ln = log_scale_sequence(40)
    assert_allclose(np.exp(ln[:5]), [1, 1, 3, 15, 105])
    for l in range(1, 41):
        lo, hi = scale_sequence_bounds(l)
        assert lo <= ln[l] + 1e-12 and ln[l] <= hi + 1e-12


def test_cropping_plain_delta_three():
    rep = cropping_check("plain", 0.0, 3.0, 2, 0.1)
    assert rep.accurately_cropping and all(rep.flags.values())
    assert math.isfinite(rep.k_sup)


def test_cropping_plain_delta_two_fails():
    rep = cropping_check("plain", 0.0, 2.0, 2, 0.1)
    assert not rep.accurately_cropping
    assert not rep.flags["k_sup"]


def test_cropping_min_kernel():
    rep = cropping_check("min", 0.5, 3.0, 2, 0.1)
    assert rep.accurately_cropping


def test_cropping_report_invariants():
    rep = cropping_check("pa", 0.3, 3.0, 2, 0.1, L=12, K=10)
    for terms in (rep.log_sum1_terms, rep.log_sum2_terms):
        assert np.all(np.diff(np.cumsum(np.exp(terms))) >= 0)
    for name, flag in rep.flags.items():
        if flag:
            assert name != "sum1" or np.exp(rep.log_sum1_terms[-1]) < 1e-8
    with pytest.raises(ModelError):
        cropping_check("pa", 0.3, 3.0, 2, 0.1, L=41)
    with pytest.raises(ModelError):
        cropping_check("pa", 0.3, 3.0, 2, -0.1)


T, R, U, B = Phase.TRANSIENT, Phase.RECURRENT_D2, Phase.UNKNOWN, Phase.BOUNDARY

PHASE_TABLE = [
    ("pa", 0.8, 3.0, 2, T),
    ("pa", 0.3, 3.0, 2, R),
    ("pa", 0.6, 3.0, 2, U),
    ("pa", 0.3, 1.5, 2, T),
    ("pa", 0.9, 1.5, 2, T),
    ("pa", 0.5, 3.0, 2, B),
    ("pa", 0.3, 2.0, 2, B),
    ("pa", 0.75, 3.0, 2, B),
    ("pa", 0.3, 3.0, 3, U),
    ("min", 0.5, 3.0, 2, R),
    ("min", 0.7, 3.0, 2, U),
    ("min", 0.8, 3.0, 2, T),
    ("min", 0.2, 1.8, 2, T),
    ("min", 2 / 3, 3.0, 2, B),
    ("sum", 0.7, 3.0, 2, U),
    ("sum", 0.4, 4.0, 2, R),
    ("sum", 0.85, 5.0, 2, T),
    ("prod", 0.3, 3.0, 2, R),
    ("prod", 0.6, 3.0, 2, T),
    ("prod", 0.5, 3.0, 2, B),
    ("prod", 0.3, 2.0, 2, B),
    ("prod", 0.4, 1.5, 2, T),
    ("max", 0.2, 5.0, 2, T),
    ("max", 1.5, 3.0, 2, T),
    ("plain", 0.0, 3.0, 2, R),
    ("plain", 0.0, 1.5, 2, T),
    ("plain", 0.0, 2.0, 2, B),
]


@pytest.mark.parametrize("kernel,gamma,delta,d,label", PHASE_TABLE)
def test_phase_table(kernel, gamma, delta, d, label):
    assert phase_classify(kernel, gamma, delta, d) is label


def test_phase_errors():
    with pytest.raises(ModelError):
        phase_classify("pa", 0.3, 1.0)
    with pytest.raises(ModelError):
        phase_classify("pa", 1.2, 3.0)


@pytest.mark.parametrize("kernel", ["plain", "min", "sum", "prod"])
def test_phase_consistent_with_criteria(kernel):
    for gamma in (0.1, 0.2, 0.3, 0.4, 0.6):
        for delta in (2.5, 3.0, 4.0):
            label = phase_classify(kernel, gamma, delta, 2)
            if label is Phase.UNKNOWN:
                continue
            if gamma_condition(kernel, gamma).passes and kappa_exponent(kernel, gamma, delta, 2).limit > 2.1:
                assert label is Phase.RECURRENT_D2


@pytest.mark.parametrize("gamma,delta", [(0.1, 1.5), (0.2, 1.8)])
def test_kappa_pa_capped_by_delta(gamma, delta):
    # the pair with both marks near 1 alone contributes n^(-d delta)
    assert kappa_exponent("pa", gamma, delta, 2).limit == pytest.approx(delta, abs=0.05)
