import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localu.kernels import gaussian, get_kernel, make_higher_order
from localu.models import UnsupportedModel, get_law, make_model
from localu.theory import (
    bias_prediction,
    bias_slope,
    convolution_cross_covariance,
    density_power_integral,
    kernel_mean,
    limit_covariance,
    limit_variance,
    projection_variance_rhs,
    rho,
    theorem7_sigma,
)

SUM = make_model("normal01", "sum")
# 4 (int phi^3 - (int phi^2)^2) with int phi^3 = 1/(2 pi sqrt 3), int phi^2 = 1/(2 sqrt pi)
SIGMA2_NORMAL = 4.0 * (1.0 / (2.0 * math.pi * math.sqrt(3.0)) - 1.0 / (4.0 * math.pi))


def test_normal_sum_limit_variance():
    assert limit_variance(SUM, 0.0) == pytest.approx(SIGMA2_NORMAL, abs=1e-9)
    assert limit_variance(SUM, 0.0) == pytest.approx(0.049242, abs=1e-6)


def _uniform_distance_variance(t):
    # fbar(t, x) = 2 (I{x + t <= 1} + I{x >= t}) with x ~ U(0, 1)
    if t <= 0.5:
        return 8.0 * t * (1.0 - 2.0 * t)
    return 8.0 * (1.0 - t) * (2.0 * t - 1.0)


@pytest.mark.parametrize("t", [0.1, 0.25, 0.4, 0.5, 0.7, 0.9])
def test_uniform_distance_variance(t):
    model = make_model("uniform01", "distance")
    assert limit_variance(model, t) == pytest.approx(_uniform_distance_variance(t), abs=1e-8)


def test_uniform_distance_degenerate_point():
    assert limit_variance(make_model("uniform01", "distance"), 0.5) == pytest.approx(0.0, abs=1e-10)


def test_normal_sum_covariance_closed_form():
    # Cov(2 phi(s - X), 2 phi(t - X)) for X ~ N(0, 1)
    s, t = 0.3, -0.5
    e_prod = 1.0 / (2 * math.pi * math.sqrt(3)) * math.exp(-(s * s + t * t) / 2 + (s + t) ** 2 / 6)
    mean = lambda u: math.exp(-u * u / 4.0) / (2.0 * math.sqrt(math.pi))
    expect = 4.0 * (e_prod - mean(s) * mean(t))
    assert limit_covariance(SUM, s, t) == pytest.approx(expect, abs=1e-9)


def test_rho_identities():
    assert rho(SUM, 0.3, 0.3) == 0.0
    assert rho(SUM, 0.2, -0.7) == pytest.approx(rho(SUM, -0.7, 0.2), abs=1e-12)
    assert rho(SUM, 0.0, 0.1) > rho(SUM, 0.0, 0.01) > 0.0


@pytest.mark.parametrize("model", [SUM, make_model("triangular", "sum"), make_model("uniform01", "distance")], ids=lambda m: m.name)
def test_rho_consistent_with_covariances(model):
    for u, v in [(0.3, 0.8), (0.6, 1.2), (1.0, 0.45)]:
        expect = limit_variance(model, u) + limit_variance(model, v) - 2.0 * limit_covariance(model, u, v)
        assert rho(model, u, v) ** 2 == pytest.approx(expect, abs=1e-8)


@given(s=st.floats(-2, 2), t=st.floats(-2, 2))
def test_covariance_psd(s, t):
    a, b = limit_variance(SUM, s), limit_variance(SUM, t)
    c = limit_covariance(SUM, s, t)
    assert c == pytest.approx(limit_covariance(SUM, t, s), abs=1e-12)
    assert a * b - c * c >= -1e-12


# --- sigma^2 of the interpoint-distance process ------------------------------------------


def test_sigma_normal():
    assert theorem7_sigma("normal01") == pytest.approx(SIGMA2_NORMAL, abs=1e-10)


def test_sigma_uniform_exactly_zero():
    assert theorem7_sigma("uniform01") == 0.0


def test_sigma_triangular():
    assert density_power_integral("triangular", 2) == pytest.approx(4.0 / 3.0, abs=1e-12)
    assert density_power_integral("triangular", 3) == pytest.approx(2.0, abs=1e-12)
    assert theorem7_sigma("triangular") == pytest.approx(8.0 / 9.0, abs=1e-10)


def test_sigma_callable_density():
    # exponential: int f^2 = 1/2, int f^3 = 1/3
    f = lambda x: math.exp(-x)
    assert theorem7_sigma(f, limits=(0.0, 60.0)) == pytest.approx(4.0 * (1 / 3 - 1 / 4), abs=1e-10)
    with pytest.raises(ValueError):
        theorem7_sigma(f)


def test_sigma_product_density():
    i2, i3 = 1.0 / (2.0 * math.sqrt(math.pi)), 1.0 / (2.0 * math.pi * math.sqrt(3.0))
    assert theorem7_sigma("normal01", dim=2) == pytest.approx(4.0 * (i3**2 - i2**4), abs=1e-10)


@pytest.mark.parametrize("law", ["normal01", "triangular", "exponential1"])
def test_sigma_equals_difference_model_variance(law):
    model = make_model(law, "difference")
    assert limit_variance(model, 0.0) == pytest.approx(theorem7_sigma(law), abs=1e-8)


def test_sigma_rejects_discrete():
    with pytest.raises(UnsupportedModel):
        theorem7_sigma(get_law("discrete(0,1;0.5,0.5)"))


# --- convolution powers ----------------------------------------------------------------------


def test_cross_covariance_closed_form():
    # Cov(2 phi(X), 3 phi_sqrt2(X)), X ~ N(0, 1): 6 [1/(2 pi sqrt 5) - 1/(2 pi sqrt 6)]
    expect = 3.0 / math.pi * (1.0 / math.sqrt(5.0) - 1.0 / math.sqrt(6.0))
    val = convolution_cross_covariance("normal01", 2, 3, 0.0, 0.0)
    assert val == pytest.approx(expect, abs=1e-10)
    # regression fixture frozen before the main build
    assert val == pytest.approx(0.037209125433468104, abs=1e-10)


@pytest.mark.parametrize("law", ["normal01", "uniform01"])
def test_cross_covariance_matches_limit_variance(law):
    model = make_model(law, "sum")
    for t in (0.4, 1.0):
        assert convolution_cross_covariance(law, 2, 2, t, t) == pytest.approx(limit_variance(model, t), abs=1e-8)


@pytest.mark.parametrize("law", ["normal01", "uniform01", "triangular"])
def test_cross_covariance_psd(law):
    rng = np.random.default_rng(0)
    for _ in range(4):
        i, j = rng.integers(2, 5, size=2)
        s, t = rng.uniform(0.5, 2.5, size=2)
        a = convolution_cross_covariance(law, i, i, s, s)
        b = convolution_cross_covariance(law, j, j, t, t)
        c = convolution_cross_covariance(law, i, j, s, t)
        assert a >= -1e-12 and b >= -1e-12 and a * b - c * c >= -1e-10


def test_cross_covariance_order_check():
    with pytest.raises(ValueError):
        convolution_cross_covariance("normal01", 1, 2, 0.0, 0.0)


# --- bias ----------------------------------------------------------------------------------------


def test_bias_closed_form():
    # (K_h * f_g)(0) - f_g(0) for Gaussian K and f_g = N(0, 2)
    for h in (0.05, 0.2, 0.4):
        expect = 1 / math.sqrt(2 * math.pi * (2 + h * h)) - 1 / math.sqrt(4 * math.pi)
        assert bias_prediction(SUM, gaussian(), 0.0, h) == pytest.approx(expect, abs=1e-13)


def test_bias_slope_order_two():
    slope, _ = bias_slope(SUM, gaussian(), 0.0, [0.4, 0.2, 0.1, 0.05])
    assert 1.9 <= slope <= 2.1


def test_bias_slope_order_four():
    slope, _ = bias_slope(SUM, get_kernel("gaussian4"), 0.0, [0.4, 0.2, 0.1, 0.05])
    assert 3.8 <= slope <= 4.2


def test_bias_slope_constructed_kernel():
    K = make_higher_order(get_kernel("epanechnikov"), 4)
    slope, _ = bias_slope(SUM, K, 0.3, [0.4, 0.2, 0.1, 0.05])
    assert 3.8 <= slope <= 4.2


def test_bias_first_order_term_vanishes():
    # symmetric kernels cancel the linear Taylor term: bias / h^2 stays bounded
    ratios = [bias_prediction(SUM, gaussian(), 0.7, h) / h**2 for h in (0.1, 0.05, 0.025)]
    assert np.ptp(ratios) < 1e-3


def test_bias_slope_drops_zero_biases():
    # linear f_g on a neighbourhood of t: the bias is exactly zero there
    model = make_model("uniform01", "sum")
    with pytest.raises(ArithmeticError):
        bias_slope(model, get_kernel("epanechnikov"), 0.5, [0.1, 0.2, 0.3])


def test_kernel_mean_planar():
    model = make_model("normal01", "difference", sample_dim=2)
    K = get_kernel("gaussian", 2)
    # X1 - X2 ~ N(0, 2 I); smoothing with N(0, h I) gives N(0, (2 + h) I) at the origin
    h = 0.3
    assert kernel_mean(model, K, h, np.zeros(2)) == pytest.approx(1.0 / (2 * math.pi * (2 + h)), abs=1e-8)


def test_projection_variance_rhs_gaussian():
    # int K^2 = N(0, 1/2) kernel / (2 sqrt pi); K^2_h * f_g at 0 for f_g = N(0, 2)
    h = 0.2
    expect = (1 / (2 * math.sqrt(math.pi))) * (1 / math.sqrt(2 * math.pi * (2 + h * h / 2))) / h
    assert projection_variance_rhs(SUM, gaussian(), h, 0.0) == pytest.approx(expect, rel=1e-9)
