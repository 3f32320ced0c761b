import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bfe_gamp.errors import NumericalError, ParameterError, UnsupportedModeError
from bfe_gamp.estimators import (FAMILIES, BernoulliGaussian, GaussianOutput, LogCoshQuadratic,
                                 OneBitOutput, PureQuadratic, ScalarEstimator, awgn_mmse_output,
                                 bg_mmse_denoise, map_prox, onebit_mmse_output, quadrature_mmse,
                                 tempered_limit_check)

LOGCOSH = LogCoshQuadratic(alpha=0.5, c=2.0)


def test_family_registry():
    assert set(FAMILIES) == {"pure_quadratic", "gaussian_output", "logcosh_quadratic",
                             "bernoulli_gaussian", "one_bit_output"}


def test_parameter_validation():
    with pytest.raises(ParameterError):
        BernoulliGaussian(rho=0.0)
    with pytest.raises(ParameterError):
        BernoulliGaussian(rho=1.5)
    with pytest.raises(ParameterError):
        GaussianOutput(y=0.0, noise_var=-1.0)
    with pytest.raises(ParameterError):
        PureQuadratic(alpha=0.0)
    with pytest.raises(ParameterError):
        LogCoshQuadratic(alpha=-1.0)
    with pytest.raises(ParameterError):
        OneBitOutput(y=0.5)
    with pytest.raises(ParameterError):
        PureQuadratic(temperature=0.0)


def test_unsupported_modes():
    with pytest.raises(UnsupportedModeError):
        ScalarEstimator(BernoulliGaussian(), "map")
    with pytest.raises(UnsupportedModeError):
        ScalarEstimator(OneBitOutput(y=1.0), "map")
    with pytest.raises(UnsupportedModeError):
        BernoulliGaussian(temperature=0.5)
    with pytest.raises(ParameterError):
        ScalarEstimator(LOGCOSH, "median")


# bernoulli-gaussian -------------------------------------------------------

def test_bg_dense_limit():
    r, tau, s = np.linspace(-3, 3, 9), 0.4, 2.0
    out = bg_mmse_denoise(r, tau, 1.0, s)
    np.testing.assert_allclose(out.mean, r * s / (s + tau), atol=1e-14)
    np.testing.assert_allclose(out.variance, s * tau / (s + tau), atol=1e-14)


def test_bg_symmetry_at_zero():
    assert bg_mmse_denoise(0.0, 0.3, 0.2, 1.0).mean == 0.0


def _bg_brute_force(r, tau, rho, s_x):
    """Explicit spike weight plus scipy quadrature over the slab."""
    def lik(x):
        return np.exp(-(r - x) ** 2 / (2 * tau)) / np.sqrt(2 * np.pi * tau)

    def slab(x):
        return np.exp(-x * x / (2 * s_x)) / np.sqrt(2 * np.pi * s_x)

    spike = (1 - rho) * lik(0.0)
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=200, points=[r])
    z1 = integrate.quad(lambda x: rho * slab(x) * lik(x), -30, 30, **opts)[0]
    m1 = integrate.quad(lambda x: x * rho * slab(x) * lik(x), -30, 30, **opts)[0]
    m2 = integrate.quad(lambda x: x * x * rho * slab(x) * lik(x), -30, 30, **opts)[0]
    Z = spike + z1
    mean = m1 / Z
    return mean, m2 / Z - mean ** 2


def test_bg_matches_mixture_oracle():
    out = bg_mmse_denoise(1.5, 0.25, 0.2, 1.0)
    mean, var = _bg_brute_force(1.5, 0.25, 0.2, 1.0)
    assert abs(out.mean - mean) < 1e-10
    assert abs(out.variance - var) < 1e-10


def test_bg_extreme_inputs_stay_finite():
    r = np.array([-1e4, -60.0, 0.0, 60.0, 1e4])
    out = bg_mmse_denoise(r, 1e-3, 0.2, 1.0)
    assert np.all(np.isfinite(out.mean)) and np.all(np.isfinite(out.variance))
    np.testing.assert_allclose(out.mean[[0, -1]], r[[0, -1]] / (1 + 1e-3), rtol=1e-12)


# awgn ---------------------------------------------------------------------

def test_awgn_limits():
    out = awgn_mmse_output(0.3, 0.7, 2.0, 1e300)
    assert out.mean == pytest.approx(0.3) and out.variance == pytest.approx(0.7)
    out = awgn_mmse_output(0.3, 0.7, 2.0, 0.0)
    assert out.mean == 2.0 and out.variance == 0.0
    out = awgn_mmse_output(0.3, 0.7, 2.0, 0.7)
    assert out.mean == pytest.approx(1.15) and out.variance == pytest.approx(0.35)


def test_awgn_temperature_scales_noise():
    pen = GaussianOutput(y=1.0, noise_var=0.5, temperature=0.1)
    ref = awgn_mmse_output(0.2, 0.3, 1.0, 0.05)
    out = pen.mmse(0.2, 0.3)
    assert out.mean == pytest.approx(ref.mean) and out.variance == pytest.approx(ref.variance)


# one-bit ------------------------------------------------------------------

def test_onebit_half_normal():
    out = onebit_mmse_output(0.0, 1.0, 1.0)
    assert out.mean == pytest.approx(np.sqrt(2 / np.pi), abs=1e-14)
    assert out.variance == pytest.approx(1 - 2 / np.pi, abs=1e-14)


def test_onebit_inactive_truncation():
    out = onebit_mmse_output(10.0, 1.0, 1.0)
    assert abs(out.mean - 10.0) < 1e-6
    assert abs(out.variance - 1.0) < 1e-4


def test_onebit_deep_tail_is_finite_and_positive():
    p = np.array([-1e3, -200.0, -40.0, -31.0, -29.0])
    out = onebit_mmse_output(p, 1.0, 1.0)
    assert np.all(out.mean > 0) and np.all(out.variance > 0)
    # mean ~ 1/|p| and variance ~ 1/p^2 deep in the tail
    np.testing.assert_allclose(out.mean[0], 1e-3, rtol=1e-5)
    np.testing.assert_allclose(out.variance[0], 1e-6, rtol=1e-4)


@settings(max_examples=60, deadline=None)
@given(p=st.floats(-50, 50), tau=st.floats(1e-3, 1e2))
def test_onebit_sign_flip_and_range(p, tau):
    pos = onebit_mmse_output(-p, tau, 1.0)
    neg = onebit_mmse_output(p, tau, -1.0)
    assert neg.mean == pytest.approx(-pos.mean, rel=1e-12, abs=1e-300)
    assert 0.0 < pos.variance <= tau
    assert pos.mean > 0


def test_onebit_matches_gauss_legendre_oracle():
    p = np.linspace(-6, 6, 25)
    for tau in (0.01, 1.0, 10.0):
        for y in (1.0, -1.0):
            a = onebit_mmse_output(p, tau, y)
            b = quadrature_mmse(OneBitOutput(y=y), p, np.full_like(p, tau), 61)
            np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
            np.testing.assert_allclose(a.variance, b.variance, atol=1e-10)


# map prox -----------------------------------------------------------------

def test_prox_pure_quadratic_closed_form():
    alpha, r, tau = 2.0, np.linspace(-2, 2, 7), 0.3
    out = map_prox(PureQuadratic(alpha=alpha), r, tau)
    np.testing.assert_allclose(out.mean, r / (1 + alpha * tau), atol=1e-15)
    np.testing.assert_allclose(out.variance, tau / (1 + alpha * tau), atol=1e-15)


def test_prox_logcosh_symmetry():
    assert map_prox(LOGCOSH, 0.0, 0.7).mean == pytest.approx(0.0, abs=1e-15)


def test_prox_logcosh_grid_search():
    r, tau = 1.0, 0.3
    grid = np.arange(-1.0, 2.0, 1e-6)
    obj = LOGCOSH.value(grid) + (grid - r) ** 2 / (2 * tau)
    assert abs(map_prox(LOGCOSH, r, tau).mean - grid[np.argmin(obj)]) < 1e-5


def test_prox_stationarity_tolerance_and_hard_cases():
    # includes a point where undamped Newton alternates between bracket ends
    r = np.array([1.6471285293756543, -5.0, 0.01, 40.0, -1e3])
    tau = np.array([1.6991308584192926, 10.0, 0.01, 1e3, 1e-4])
    out = map_prox(LOGCOSH, r, tau)
    res = LOGCOSH.grad(out.mean) + (out.mean - r) / tau
    assert np.all(np.abs(res) <= 1e-12 * (1 + np.abs(r) / tau))


@settings(max_examples=100, deadline=None)
@given(r=st.floats(-50, 50), tau=st.floats(1e-4, 1e4), alpha=st.floats(0.05, 5), c=st.floats(0, 5))
def test_prox_property(r, tau, alpha, c):
    pen = LogCoshQuadratic(alpha=alpha, c=c)
    out = map_prox(pen, r, tau)
    res = pen.grad(out.mean) + (out.mean - r) / tau
    assert abs(res) <= 1e-12 * (1 + abs(r) / tau) * 10
    assert 0 < out.variance <= tau


def test_prox_rejects_nonpositive_tau():
    with pytest.raises(ParameterError):
        map_prox(LOGCOSH, 1.0, 0.0)


# quadrature ---------------------------------------------------------------

def test_quadrature_gaussian_exact():
    pen = PureQuadratic(alpha=1.0)
    r, tau = np.linspace(-3, 3, 11), 0.8
    out = quadrature_mmse(pen, r, np.full_like(r, tau))
    np.testing.assert_allclose(out.mean, r / (1 + tau), atol=1e-12)
    np.testing.assert_allclose(out.variance, tau / (1 + tau), atol=1e-12)


def test_quadrature_bg_cross_oracle():
    r = np.linspace(-4, 4, 41)
    for tau in (0.01, 0.1, 1.0, 10.0):
        a = bg_mmse_denoise(r, tau, 0.2, 1.0)
        b = quadrature_mmse(BernoulliGaussian(rho=0.2, s_x=1.0), r, np.full_like(r, tau), 61)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)
        np.testing.assert_allclose(a.variance, b.variance, atol=1e-9)


def test_quadrature_self_convergence():
    r = np.linspace(-4, 4, 41)
    quad = PureQuadratic(alpha=2.0, center=0.3)
    for tau in (0.01, 1.0, 10.0):
        t = np.full_like(r, tau)
        a, b = quadrature_mmse(quad, r, t, 31), quadrature_mmse(quad, r, t, 61)
        assert np.max(np.abs(a.mean - b.mean)) < 1e-9
        # logcosh needs the production order; 201 -> 401 is the smooth-family check
        a, b = quadrature_mmse(LOGCOSH, r, t, 201), quadrature_mmse(LOGCOSH, r, t, 401)
        assert np.max(np.abs(a.mean - b.mean)) < 1e-9
        assert np.max(np.abs(a.variance - b.variance)) < 1e-9


# tempered limit -----------------------------------------------------------

def test_tempered_limit_quadratic_exact():
    gaps = tempered_limit_check(PureQuadratic(alpha=2.0, center=0.3), 0.9, 0.5, [1e-1, 1e-2, 1e-3])
    assert np.all(gaps < 1e-12)


def test_tempered_limit_logcosh_rate():
    gaps = tempered_limit_check(LOGCOSH, 1.2, 0.8, [1e-1, 1e-2, 1e-3])
    assert np.all(np.diff(gaps) < 0)
    # O(T): one decade of T buys about one decade of gap
    assert 0.05 < gaps[2] / gaps[1] < 0.2


def test_tempered_limit_rejects_bad_schedule():
    with pytest.raises(ParameterError):
        tempered_limit_check(LOGCOSH, 0.0, 1.0, [1e-3, 1e-2])


# shared properties --------------------------------------------------------

ESTIMATORS = [
    ScalarEstimator(PureQuadratic(alpha=2.0, center=0.3), "mmse"),
    ScalarEstimator(GaussianOutput(y=0.7, noise_var=0.5), "map"),
    ScalarEstimator(LOGCOSH, "mmse"),
    ScalarEstimator(LOGCOSH, "map"),
    ScalarEstimator(LogCoshQuadratic(alpha=1.0, c=1.0, center=0.4), "mmse"),
    ScalarEstimator(BernoulliGaussian(rho=0.2, s_x=1.0), "mmse"),
    ScalarEstimator(OneBitOutput(y=1.0), "mmse"),
]


@pytest.mark.parametrize("g", ESTIMATORS, ids=repr)
def test_monotone_and_positive(g):
    r = np.linspace(-6, 6, 301)
    for tau in (0.01, 1.0, 10.0):
        out = g(r, np.full_like(r, tau))
        assert np.all(np.diff(out.mean) >= -1e-12)
        assert np.all(out.variance > 0)


@settings(max_examples=40, deadline=None)
@given(r=st.floats(-8, 8), tau=st.floats(1e-2, 10))
def test_logcosh_mmse_variance_below_tau(r, tau):
    out = LOGCOSH.mmse(np.array([r]), np.array([tau]))
    assert 0 < out.variance[0] <= tau
    lo, hi = LOGCOSH.curvature_bounds()
    assert 1 / (1 + hi * tau) - 1e-9 <= out.variance[0] / tau <= 1 / (1 + lo * tau) + 1e-12


def test_variance_floor():
    g = ScalarEstimator(GaussianOutput(y=1.0, noise_var=0.0), "mmse")
    assert g(np.array([0.0]), np.array([1.0])).variance[0] == 1e-14


def test_array_parameters_broadcast():
    pen = LogCoshQuadratic(alpha=1.0, c=1.0, center=np.array([0.0, 1.0, -2.0]))
    out = pen.mmse(np.zeros(3), np.ones(3))
    ref = [LogCoshQuadratic(alpha=1.0, c=1.0, center=c).mmse(np.zeros(1), np.ones(1)).mean[0]
           for c in (0.0, 1.0, -2.0)]
    np.testing.assert_allclose(out.mean, ref, atol=1e-14)


def test_prior_moments():
    mean, var = BernoulliGaussian(rho=0.2, s_x=3.0).prior_moments(4)
    np.testing.assert_array_equal(mean, np.zeros(4))
    np.testing.assert_allclose(var, 0.6)
    mean, var = PureQuadratic(alpha=4.0, center=1.0).prior_moments(2)
    np.testing.assert_allclose(mean, 1.0)
    np.testing.assert_allclose(var, 0.25)
    _, var = LOGCOSH.prior_moments(1)
    x = np.linspace(-10, 10, 200_001)
    w = np.exp(-LOGCOSH.value(x))
    assert var[0] == pytest.approx(np.sum(x * x * w) / np.sum(w), rel=1e-8)


def test_newton_prox_iteration_cap_raises():
    from bfe_gamp.estimators import _newton_prox
    with pytest.raises(NumericalError):
        _newton_prox(LOGCOSH, np.array([3.0]), np.array([2.0]), max_iter=1)
