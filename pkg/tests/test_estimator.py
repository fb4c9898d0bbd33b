import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localu.estimator import (
    EstimateSurface,
    FastPathUnsupported,
    InsufficientSample,
    choose_method,
    count_pairs_within,
    estimate_integral_f2,
    estimate_surface,
    n_ordered_tuples,
    u_fast_distance,
    u_fast_sum,
    u_naive,
    u_naive_grid,
    u_process,
)
from localu.kernels import Kernel, eval_scaled, gaussian, get_kernel
from localu.models import make_model, parse_model, sample
from localu.theory import kernel_mean

SUM = make_model("normal01", "sum")
DIST = make_model("normal01", "distance")
BALL = get_kernel("indicator-ball")
UNIF = get_kernel("uniform")


def brute_force(x, g, K, t, lh, m):
    """Independent oracle: plain Python loops over ordered tuples."""
    import itertools

    total = 0.0
    for idx in itertools.permutations(range(len(x)), m):
        total += float(eval_scaled(K, lh, t - g(*(x[i] for i in idx))))
    return total * math.factorial(len(x) - m) / math.factorial(len(x))


# --- hand-enumerated values --------------------------------------------------------


def test_hand_example_sum():
    x = np.array([0.0, 0.2, 0.4])
    assert u_naive(x, SUM, UNIF, 0.5, 0.4) == pytest.approx(5.0 / 3.0, abs=1e-12)


def test_hand_example_far_point():
    assert u_naive(np.array([0.0, 0.2, 0.4]), SUM, UNIF, 3.0, 0.4) == 0.0


def test_hand_example_distance():
    x = np.array([0.0, 0.1, 0.5])
    assert u_naive(x, DIST, BALL, 0.0, 0.2) == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_insufficient_sample():
    with pytest.raises(InsufficientSample):
        u_naive(np.array([1.0]), SUM, gaussian(), 0.0, 0.3)
    with pytest.raises(InsufficientSample):
        u_naive(np.array([1.0, 2.0]), make_model("normal01", "sum", m=3), gaussian(), 0.0, 0.3)


@given(seed=st.integers(0, 10_000), m=st.sampled_from([2, 3]), t=st.floats(-2, 2), lh=st.floats(0.05, 2.0))
def test_naive_matches_loop_oracle(seed, m, t, lh):
    model = make_model("normal01", "linear", coefs=(1.0, -0.5, 2.0)[:m])
    x = np.random.default_rng(seed).normal(size=6)
    K = get_kernel("epanechnikov")
    assert u_naive(x, model, K, t, lh) == pytest.approx(brute_force(x, model.g, K, t, lh, m), rel=1e-12, abs=1e-14)


# --- centering -------------------------------------------------------------------------


def test_mean_term_normal_sum():
    # (K_h * f_g)(0) with Gaussian K is the N(0, 2 + h^2) density at 0
    val = kernel_mean(SUM, gaussian(), 0.2, 0.0)
    assert val == pytest.approx(1.0 / math.sqrt(2.0 * math.pi * 2.04), abs=1e-10)
    assert abs(val - 0.281) < 2e-3


def test_mean_term_indicator_triangular():
    # uniform01 sum has the triangular density 1 - |s - 1|; average over [0.9, 1.1]
    model = make_model("uniform01", "sum")
    assert kernel_mean(model, UNIF, 0.2, 1.0) == pytest.approx((0.2 - 0.01) / 0.2, abs=1e-12)
    # window straddling the left edge: (1/0.2) * int_0^0.05 s ds
    assert kernel_mean(model, UNIF, 0.2, -0.05) == pytest.approx(0.05**2 / 2 / 0.2, abs=1e-12)


def test_u_process_centering():
    R, n = 200, 60
    vals = np.array([u_process(sample(SUM, n, 9, r), SUM, gaussian(), 0.0, 1.0, 0.4) for r in range(R)])
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(R)


# --- FFT path ---------------------------------------------------------------------------


def test_fft_small_example():
    x = np.array([0.0, 0.2, 0.4])
    grid = np.arange(-1.0, 2.0 + 1e-9, 0.01)
    fast = u_fast_sum(x, SUM, gaussian(), grid, 0.3, delta=1e-3)
    naive = u_naive_grid(x, SUM, gaussian(), grid, 0.3)
    assert np.max(np.abs(fast - naive)) <= 1e-3


@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("seed", range(5))
def test_fft_matches_naive(m, seed):
    rng = np.random.default_rng(seed)
    model = make_model("normal01", "sum", m=m)
    grid = np.linspace(-3.0, 3.0, 61)
    for n in (m, 7, 19, 40):
        x = rng.normal(size=n)
        fast = u_fast_sum(x, model, gaussian(), grid, 0.25)
        naive = u_naive_grid(x, model, gaussian(), grid, 0.25)
        assert np.max(np.abs(fast - naive)) <= 1e-3


def test_fft_linear_combination():
    model = make_model("uniform01", "linear", coefs=(1.0, -2.0, 0.5))
    x = np.random.default_rng(1).random(15)
    grid = np.linspace(-2.0, 1.5, 36)
    K = get_kernel("epanechnikov")
    assert np.max(np.abs(u_fast_sum(x, model, K, grid, 0.3) - u_naive_grid(x, model, K, grid, 0.3))) <= 1e-4


def test_fft_guards():
    with pytest.raises(InsufficientSample):
        u_fast_sum(np.array([0.3]), SUM, gaussian(), [0.0], 0.3)
    with pytest.raises(ValueError):
        u_fast_sum(np.arange(5.0), SUM, gaussian(), [0.0, 0.1, 0.3], 0.3)
    with pytest.raises(FastPathUnsupported):
        u_fast_sum(np.arange(5.0), DIST, gaussian(), [0.0, 0.1], 0.3)


# --- pair counting --------------------------------------------------------------------


def test_distance_counts_hand_example():
    counts, values = u_fast_distance(np.array([0.0, 0.1, 0.5]), DIST, BALL, [0.2])
    assert counts[0] == 2
    assert values[0] == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_radius_zero_counts_nothing():
    assert count_pairs_within(np.array([0.0, 0.1, 0.5]), DIST, BALL, 0.0) == 0


def test_radius_covering_everything():
    x = np.random.default_rng(0).random(17)
    assert count_pairs_within(x, DIST, BALL, 2.0) == 17 * 16


def test_fast_distance_rejects_smooth_kernel():
    with pytest.raises(FastPathUnsupported):
        u_fast_distance(np.array([0.0, 0.1, 0.5]), DIST, gaussian(), [0.2])


@given(
    seed=st.integers(0, 100_000),
    n=st.integers(2, 40),
    lh=st.floats(1e-3, 1.5),
    kind=st.sampled_from(["distance", "difference"]),
    kern=st.sampled_from(["indicator-ball", "uniform"]),
    grid=st.booleans(),
)
def test_counts_equal_naive_bitwise(seed, n, lh, kind, kern, grid):
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    if grid:
        # many exact ties with the radius
        x = np.round(x * 20) / 20
    model = make_model("uniform01", kind)
    K = get_kernel(kern)
    _, fast = u_fast_distance(x, model, K, [lh])
    assert fast[0] == u_naive(x, model, K, 0.0, lh)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("seed", range(3))
def test_binned_counts_equal_naive(dim, seed):
    rng = np.random.default_rng(seed)
    model = make_model("uniform01", "distance", sample_dim=dim)
    K = get_kernel("indicator-ball")
    x = rng.random((40, dim))
    for lh in (0.05, 0.2, 0.7):
        _, fast = u_fast_distance(x, model, K, [lh])
        assert fast[0] == u_naive(x, model, K, 0.0, lh)


def test_counts_monotone_in_lambda():
    x = np.random.default_rng(4).normal(size=200)
    counts, _ = u_fast_distance(x, DIST, BALL, np.linspace(0.01, 1.0, 30))
    assert np.all(np.diff(counts) >= 0)


def test_indicator_values_are_rational():
    x = np.random.default_rng(5).normal(size=30)
    lh = 0.37
    val = u_naive(x, DIST, BALL, 0.0, lh)
    scaled = val * n_ordered_tuples(30, 2) * lh / 0.5
    assert scaled == pytest.approx(round(scaled), abs=1e-9)


# --- structural properties -----------------------------------------------------------


@given(seed=st.integers(0, 10_000), t=st.floats(-2, 2))
def test_permutation_invariance(seed, t):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=9)
    model = make_model("normal01", "linear", coefs=(1.0, 3.0))
    a = u_naive(x, model, gaussian(), t, 0.4)
    b = u_naive(rng.permutation(x), model, gaussian(), t, 0.4)
    assert a == pytest.approx(b, rel=1e-12)


@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), t=st.floats(-2, 2))
def test_linear_in_kernel(alpha, beta, t):
    K1, K2 = gaussian(), get_kernel("epanechnikov")
    mix = Kernel("mix", 1, lambda u: alpha * K1.func(u) + beta * K2.func(u), math.inf, tail_radius=8.5)
    x = np.random.default_rng(2).normal(size=12)
    lhs = u_naive(x, SUM, mix, t, 0.3)
    rhs = alpha * u_naive(x, SUM, K1, t, 0.3) + beta * u_naive(x, SUM, K2, t, 0.3)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# --- integral of f^2 ----------------------------------------------------------------------


def test_integral_f2_normal():
    n = 5000
    est = estimate_integral_f2(sample(DIST, n, 0), gaussian(), n ** (-1 / 3))
    assert abs(est - 1.0 / (2.0 * math.sqrt(math.pi))) < 0.03


def test_integral_f2_uniform():
    model = make_model("uniform01", "distance")
    est = estimate_integral_f2(sample(model, 5000, 1), BALL, 5000 ** (-1 / 3))
    assert abs(est - 1.0) < 0.1


def test_integral_f2_single_pair():
    h = 0.3
    # both ordered pairs sit at distance 0, so U(0) = K_h(0) and the estimate is K_h(0)
    assert estimate_integral_f2(np.array([0.0, 0.0]), gaussian(), h) == pytest.approx(eval_scaled(gaussian(), h, 0.0))


def test_integral_f2_count_path_matches_naive():
    x = sample(DIST, 800, 3).points
    assert estimate_integral_f2(x, BALL, 0.1) == u_naive(x, DIST, BALL, 0.0, 0.1)


# --- surfaces --------------------------------------------------------------------------------


def test_surface_shapes_and_centering():
    s = sample(SUM, 80, 2)
    surf = estimate_surface(s, SUM, gaussian(), np.linspace(-1, 1, 5), [0.5, 1.0, 2.0], 0.3)
    assert isinstance(surf, EstimateSurface)
    assert surf.values.shape == (5, 3) and surf.centered.shape == (5, 3)
    assert np.all(np.isfinite(surf.values))
    np.testing.assert_allclose(surf.centered, math.sqrt(80) * (surf.values - surf.means))


def test_surface_discrete_has_no_centering():
    model = parse_model("discrete(0,1;0.5,0.5):sum:m=2")
    surf = estimate_surface(sample(model, 10, 0), model, UNIF, [0.5, 1.0], [1.0], 1.0)
    assert surf.centered is None


def test_surface_fast_equals_naive():
    s = sample(SUM, 300, 4)
    grid = np.linspace(-2, 2, 21)
    a = estimate_surface(s, SUM, gaussian(), grid, [0.5, 1.0], 0.2, method="fast")
    b = estimate_surface(s, SUM, gaussian(), grid, [0.5, 1.0], 0.2, method="naive")
    assert a.method == "fft" and b.method == "naive"
    assert np.max(np.abs(a.values - b.values)) < 1e-4


def test_choose_method():
    assert choose_method(DIST, BALL, [0.0], 100) == "count"
    assert choose_method(SUM, gaussian(), [0.0], 100) == "naive"
    assert choose_method(SUM, gaussian(), np.linspace(0, 1, 50), 1000) == "fft"
    with pytest.raises(FastPathUnsupported):
        choose_method(DIST, gaussian(), [0.0], 100, "fast")
