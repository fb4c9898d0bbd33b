import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from localu.models import (
    ModelSpecError,
    UnsupportedModel,
    describe_model,
    discrete_law,
    fbar,
    fg,
    get_law,
    make_model,
    parse_model,
    sample,
)

SQ2PI = math.sqrt(2.0 * math.pi)


def phi(x, s=1.0):
    return np.exp(-0.5 * (np.asarray(x) / s) ** 2) / (s * SQ2PI)


# --- closed-form values ------------------------------------------------------------


def test_fbar_normal_sum():
    assert fbar(make_model("normal01", "sum"), 0.0, 0.0) == pytest.approx(2.0 / SQ2PI, abs=1e-12)
    assert fbar(make_model("normal01", "sum"), 0.0, 0.0) == pytest.approx(0.797885, abs=1e-6)


def test_fbar_uniform_sum():
    assert fbar(make_model("uniform01", "sum"), 0.5, 0.2) == pytest.approx(2.0)


def test_fbar_uniform_distance():
    assert fbar(make_model("uniform01", "distance"), 0.3, 0.5) == pytest.approx(4.0)


def test_fg_normal_sum():
    assert fg(make_model("normal01", "sum"), 0.0) == pytest.approx(1.0 / (2.0 * math.sqrt(math.pi)), abs=1e-12)


def test_fg_uniform_sum_peak():
    assert fg(make_model("uniform01", "sum"), 1.0) == pytest.approx(1.0, abs=1e-12)


def test_fg_uniform_distance_at_zero():
    assert fg(make_model("uniform01", "distance"), 0.0) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("t", [0.0, 0.25, 0.5])
def test_fg_uniform_distance_linear(t):
    assert fg(make_model("uniform01", "distance"), t) == pytest.approx(2.0 * (1.0 - t), abs=1e-12)


def test_linear_combination_convolution_form():
    # g = x1 - 2 x2: given X1 = x the rest is -2 X2 ~ N(0, 4); given X2 = x it is X1 ~ N(0, 1)
    model = make_model("normal01", "linear", coefs=(1.0, -2.0))
    for t, x in [(0.3, -0.4), (1.2, 0.7), (-2.0, 0.1)]:
        expect = phi(t - x, 2.0) + phi(t + 2.0 * x)
        assert fbar(model, t, x) == pytest.approx(float(expect), abs=1e-12)
    assert fg(model, 0.4) == pytest.approx(float(phi(0.4, math.sqrt(5.0))), abs=1e-12)


def test_triangular_sum_density():
    # density of the sum of two 2x-distributed variables on [0, 1]: (2/3) s^3
    model = make_model("triangular", "sum")
    for s in (0.2, 0.5, 0.9):
        assert fg(model, s) == pytest.approx(2.0 / 3.0 * s**3, abs=1e-8)


def test_uniform_three_fold_sum():
    # Irwin-Hall n=3 on [1, 2]: (-2 s^2 + 6 s - 3) / 2
    model = make_model("uniform01", "sum", m=3)
    for s in (1.1, 1.5, 1.8):
        assert fg(model, s) == pytest.approx((-2 * s * s + 6 * s - 3) / 2, abs=1e-10)


def test_planar_normal_distance_rayleigh():
    model = make_model("normal01", "distance", sample_dim=2)
    for r in (0.3, 1.0, 2.5):
        assert fg(model, r) == pytest.approx(r / 2.0 * math.exp(-r * r / 4.0), abs=1e-8)


# --- consistency identities ------------------------------------------------------

MODELS = [
    make_model("normal01", "sum"),
    make_model("uniform01", "sum"),
    make_model("uniform01", "sum", m=3),
    make_model("triangular", "sum"),
    make_model("exponential1", "sum"),
    make_model("normal01", "linear", coefs=(1.0, -2.0)),
    make_model("normal01", "difference"),
    make_model("uniform01", "distance"),
    make_model("normal01", "distance"),
    make_model("triangular", "distance"),
]


def _x_integral(model, fn, t):
    law = model.law
    lo, hi = law.quad_limits()
    # fbar(t, .) may jump where t - x or t + x crosses a breakpoint of the law
    pts = {t, -t, t / 2.0}
    for b in law.breakpoints:
        pts |= {b, t - b, b - t, t + b, (t - b) / 2.0}
    pts = sorted(p for p in pts if lo < p < hi) or None
    val, _ = integrate.quad(lambda x: fn(x) * float(law.pdf(x)), lo, hi, points=pts, limit=400, epsabs=1e-12)
    return val


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_mean_of_fbar_is_m_fg(model):
    if model.g_kind == "distance":
        ts = np.linspace(0.05, 1.5, 10)
    else:
        lo, hi = model.law.quad_limits()
        lo, hi = max(lo, -3.0), min(hi, 3.0)
        ts = np.linspace(model.m * lo + 0.05, model.m * hi - 0.05, 10) if model.g_kind == "sum" else np.linspace(-2.5, 2.5, 10)
    for t in ts:
        lhs = _x_integral(model, lambda x: float(model.fbar(t, x)), t) / model.m
        assert lhs == pytest.approx(float(model.fg(t)), abs=1e-6)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_fg_integrates_to_one(model):
    pts = model.fg_breakpoints()
    if model.g_kind == "distance":
        lo, hi = 0.0, 12.0
    else:
        lo, hi = -12.0 * model.m * 2, 40.0 * model.m
    val, _ = integrate.quad(lambda t: float(model.fg(t)), lo, hi, points=[p for p in pts if lo < p < hi] or None, limit=800)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_sum_density_matches_direct_convolution():
    law = get_law("exponential1")
    model = make_model(law, "sum")
    for s in (0.3, 1.0, 2.5):
        # Gamma(2, 1) density
        assert fg(model, s) == pytest.approx(s * math.exp(-s), abs=1e-6)


def test_planar_uniform_fbar_closed_form():
    model = make_model("uniform01", "distance", sample_dim=2)
    t = 0.4
    # the circle of radius t about the centre lies inside the square
    assert model.fbar(t, np.array([0.5, 0.5])) == pytest.approx(2.0 * t * 2.0 * math.pi, abs=1e-8)
    # near the left edge only the arc with cos(theta) >= -0.25 stays inside
    arc = 2.0 * math.acos(-0.25)
    assert model.fbar(t, np.array([0.1, 0.5])) == pytest.approx(2.0 * t * arc, abs=1e-8)


def test_planar_uniform_distance_consistency():
    model = make_model("uniform01", "distance", sample_dim=2)
    t = 0.4
    x = np.random.default_rng(3).random((1500, 2))
    vals = model.fbar(t, x) / 2.0
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - float(model.fg(t))) < 4 * se


# --- discrete laws ------------------------------------------------------------------


def test_discrete_has_no_densities():
    model = parse_model("discrete(0,1;0.5,0.5):sum:m=2")
    with pytest.raises(UnsupportedModel):
        model.fbar(0.0, 0.0)
    with pytest.raises(UnsupportedModel):
        model.fg(0.0)


def test_discrete_validation():
    with pytest.raises(ModelSpecError):
        discrete_law([0, 1], [0.6, 0.6])
    with pytest.raises(ModelSpecError):
        discrete_law([0, 0], [0.5, 0.5])


def test_discrete_sample_support():
    model = parse_model("discrete(0,1;0.5,0.5):sum:m=2")
    s = sample(model, 4, seed=11)
    assert s.n == 4 and set(np.unique(s.points)) <= {0.0, 1.0}


# --- sampling -------------------------------------------------------------------------


def test_uniform_sample_mean():
    s = sample(make_model("uniform01", "sum"), 10_000, seed=5)
    assert abs(s.points.mean() - 0.5) < 0.02


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 50), r=st.integers(0, 5))
def test_sampling_is_deterministic(seed, n, r):
    model = make_model("normal01", "sum")
    a = sample(model, n, seed, r)
    b = sample(model, n, seed, r)
    assert np.array_equal(a.points, b.points)


def test_replications_differ():
    model = make_model("normal01", "sum")
    assert not np.array_equal(sample(model, 10, 1, 0).points, sample(model, 10, 1, 1).points)


def test_planar_sample_shape():
    s = sample(make_model("uniform01", "distance", sample_dim=2), 7, 0)
    assert s.points.shape == (7, 2)


# --- parsing -----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "spec, m, kind",
    [
        ("normal01:sum:m=2", 2, "sum"),
        ("uniform01:sum:m=3", 3, "sum"),
        ("uniform01:distance", 2, "distance"),
        ("normal01:linear(1,-2)", 2, "linear"),
        ("discrete(0,1;0.5,0.5):sum:m=2", 2, "sum"),
        ("normal01:difference", 2, "difference"),
    ],
)
def test_parse_model(spec, m, kind):
    model = parse_model(spec)
    assert model.m == m and model.g_kind == kind
    assert model.name == spec
    assert parse_model(describe_model(model)).m == m


@pytest.mark.parametrize("spec", ["normal01", "cauchy:sum", "normal01:product", "normal01:sum:k=3", "normal01:distance:m=3"])
def test_parse_model_errors(spec):
    with pytest.raises(ValueError):
        parse_model(spec)
