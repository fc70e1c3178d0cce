import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import erfc_quad
from siman.dist import (
    DistributionModel,
    bisect_sign_change,
    empirical_plus_fraction,
    erfc,
    fit_scale,
    gauss_argmax,
    gauss_objective,
    golden_section_max,
    laplace_objective,
    laplace_objective_slope,
    optimal_threshold,
    sample_weights,
)
from siman.errors import AllZero, Degenerate, InvalidArgs, InvalidScale


def test_laplace_objective_values():
    assert laplace_objective(0, 1) == 1.0
    assert laplace_objective(1, 1) == pytest.approx(2 * math.exp(-0.5), rel=1e-15)
    with pytest.raises(InvalidScale):
        laplace_objective(1, 0)


@pytest.mark.parametrize("b", [0.01, 1.0, 3.7])
def test_laplace_maximizer_is_scale(b):
    # derivative changes sign across t = b at resolution 1e-6
    assert laplace_objective_slope(b * (1 - 1e-6), b) > 0
    assert laplace_objective_slope(b * (1 + 1e-6), b) < 0
    t = golden_section_max(lambda t: laplace_objective(t, b), 0, 10 * b)
    assert t == pytest.approx(b, rel=1e-6)
    root = bisect_sign_change(lambda t: laplace_objective_slope(t, b), 0.0, 10 * b)
    assert abs(root - b) / b <= 1e-9


def test_laplace_objective_matches_integral_form():
    # centroid ratio 2 int_t^inf w f / sqrt(2 int_t^inf f) with f the Laplace(0, b) density
    from scipy import integrate

    b, t = 0.7, 0.4
    f = lambda w: math.exp(-w / b) / (2 * b)
    num = 2 * integrate.quad(lambda w: w * f(w), t, math.inf)[0]
    den = math.sqrt(2 * integrate.quad(f, t, math.inf)[0])
    assert laplace_objective(t, b) == pytest.approx(num / den, rel=1e-9)


def test_gauss_objective_values():
    assert gauss_objective(0.0) == pytest.approx(1.0, abs=1e-7)
    # exp(-1)/sqrt(erfc(1)) with erfc(1) from quadrature
    assert gauss_objective(1.0) == pytest.approx(math.exp(-1) / math.sqrt(erfc_quad(1.0)), abs=1e-6)
    assert gauss_objective(1.0) == pytest.approx(0.92756, abs=1e-5)


def test_gauss_argmax():
    m = gauss_argmax()
    assert m == pytest.approx(0.43, abs=0.005)
    # stable across restarts with different brackets
    for lo, hi in [(0.0, 3.0), (0.1, 2.0), (0.2, 1.0), (0.0, 0.9)]:
        assert gauss_argmax(lo, hi) == pytest.approx(m, abs=1e-6)
    # derivative of the log objective changes sign at m (quadrature erfc)
    g = lambda x: -2 * x + math.exp(-x * x) / (math.sqrt(math.pi) * erfc_quad(x))
    assert g(m - 1e-3) > 0 > g(m + 1e-3)


@pytest.mark.parametrize("x", [0.0, 0.1, 0.43, 1.0, 2.5, 5.0, -0.43, -3.0])
def test_erfc_against_quadrature(x):
    assert erfc(x) == pytest.approx(erfc_quad(x), abs=1.5e-7)


def test_erfc_limits_and_reference():
    assert erfc(0.0) == pytest.approx(1.0, abs=1.5e-7)
    assert erfc(40.0) == pytest.approx(0.0, abs=1e-300)
    assert erfc(-40.0) == 2.0
    assert erfc(0.43) == pytest.approx(0.5432, abs=1e-4)
    xs = np.linspace(-8, 8, 20001)
    assert max(abs(erfc(x) - math.erfc(x)) for x in xs) <= 1.5e-7


@given(st.floats(-30, 30))
def test_erfc_reflection(x):
    assert erfc(x) + erfc(-x) == pytest.approx(2.0, abs=1e-7)


def test_optimal_threshold_laplace():
    r = optimal_threshold(DistributionModel("laplace", 1.0))
    assert r.t_star == 1.0
    assert r.p_plus == pytest.approx(math.exp(-1), abs=1e-12)
    assert r.p_plus == pytest.approx(0.37, abs=0.005)
    for b in (0.05, 2.0, 9.0):
        assert optimal_threshold(DistributionModel("laplace", b)).p_plus == pytest.approx(r.p_plus, abs=1e-15)


def test_optimal_threshold_gauss():
    r = optimal_threshold(DistributionModel("gauss", 1.0))
    assert r.t_star == pytest.approx(0.43 * math.sqrt(2), abs=0.01)
    assert r.p_plus == pytest.approx(0.54, abs=0.01)
    # t scales with sigma, p_plus does not
    r2 = optimal_threshold(DistributionModel("gauss", 3.0))
    assert r2.t_star == pytest.approx(3 * r.t_star)
    assert r2.p_plus == pytest.approx(r.p_plus)


def test_model_validation():
    with pytest.raises(InvalidScale):
        DistributionModel("laplace", 0.0)
    with pytest.raises(InvalidArgs):
        DistributionModel("cauchy", 1.0)


def test_sampling_is_deterministic():
    m = DistributionModel("laplace", 1.0)
    assert np.array_equal(sample_weights(m, 100, 42), sample_weights(m, 100, 42))
    assert not np.array_equal(sample_weights(m, 100, 42), sample_weights(m, 100, 43))


def test_sample_moments():
    w = sample_weights(DistributionModel("laplace", 1.0), 10**6, 1)
    assert 0.99 <= np.mean(np.abs(w)) <= 1.01
    g = sample_weights(DistributionModel("gauss", 1.0), 10**6, 1)
    assert 0.995 <= np.var(g) <= 1.005


def test_empirical_plus_fraction():
    assert empirical_plus_fraction([0.3] * 9) == 1.0
    with pytest.raises(AllZero):
        empirical_plus_fraction([0.0, 0.0])


def test_plus_fraction_band_shrinks_with_n():
    # mean absolute deviation from e^-1 over seeds drops roughly by 2 when n grows 4x
    target = math.exp(-1)
    m = DistributionModel("laplace", 1.0)
    dev = {}
    for n in (4000, 16000, 64000):
        dev[n] = np.mean([abs(empirical_plus_fraction(sample_weights(m, n, s)) - target)
                          for s in range(40)])
    assert dev[64000] < dev[16000] < dev[4000]
    assert 1.3 < dev[4000] / dev[16000] < 3.2
    assert 1.3 < dev[16000] / dev[64000] < 3.2


def test_fit_scale():
    assert fit_scale("laplace", [1, -1]).scale == 1.0
    assert fit_scale("gauss", [2, -2]).scale == 2.0
    w = sample_weights(DistributionModel("laplace", 0.5), 10**6, 9)
    assert 0.498 <= fit_scale("laplace", w).scale <= 0.502
    with pytest.raises(Degenerate):
        fit_scale("gauss", [0.0, 0.0])
