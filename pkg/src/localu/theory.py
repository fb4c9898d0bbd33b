"""Limit quantities: variances and covariances of the Gaussian limit, the
interpoint-distance sigma^2, cross-covariances of simultaneous convolution
estimators and the kernel smoothing bias.

All expectations over ``X`` are one-dimensional adaptive quadratures (two-
dimensional for planar models).
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np
from scipy import integrate

from .kernels import Kernel
from .models import BaseLaw, SampleModel, UnsupportedModel, get_law, lincomb_density

__all__ = [
    "kernel_mean",
    "limit_variance",
    "limit_covariance",
    "rho",
    "theorem7_sigma",
    "density_power_integral",
    "convolution_cross_covariance",
    "bias_prediction",
    "bias_slope",
    "projection_variance_rhs",
]

EPSABS = 1e-11


def _quad(fn, lo, hi, points=None, epsabs=EPSABS):
    pts = None
    if points is not None:
        pts = sorted({float(p) for p in points if lo < p < hi}) or None
    val, err = integrate.quad(fn, lo, hi, epsabs=epsabs, epsrel=1e-11, limit=500, points=pts)
    if not math.isfinite(val):
        raise ArithmeticError("quadrature produced a non-finite value")
    return val


def _law_points(law: BaseLaw, extra=()):
    return list(law.breakpoints) + list(extra)


def kernel_mean(model: SampleModel, K: Kernel, h: float, t) -> float:
    """``E K_h(t - g(X_1..X_m)) = (K_h * f_g)(t)`` by quadrature."""
    if K.d != model.out_dim:
        raise ValueError(f"kernel dimension {K.d} does not match g dimension {model.out_dim}")
    model._require_density()
    s = h ** (1.0 / K.d)
    if K.d == 1:
        t = float(np.asarray(t).reshape(-1)[0]) if np.ndim(t) else float(t)
        R = K.radius
        # breakpoints of v -> f_g(t - s v)
        pts = [(t - b) / s for b in model.fg_breakpoints()]
        if K.compact:
            pts += [-K.support_radius, K.support_radius]
        fn = lambda v: float(K.func(np.array(v)) * model.fg(t - s * v))
        return _quad(fn, -R, R, points=pts, epsabs=1e-12)
    if K.d == 2:
        t = np.asarray(t, dtype=float)
        fn = lambda y, x: float(K.func(np.array([x, y])) * model.fg(t - s * np.array([x, y])))
        if K.radial:
            R = K.radius
            lo = lambda x: -math.sqrt(max(R * R - x * x, 0.0))
            hi = lambda x: math.sqrt(max(R * R - x * x, 0.0))
        else:
            R = K.box_radius
            lo, hi = -R, R
        val, _ = integrate.dblquad(fn, -R, R, lo, hi, epsabs=1e-10, epsrel=1e-10)
        return val
    raise UnsupportedModel("kernel_mean is implemented for d = 1, 2")


# --- covariance of fbar(., X) -------------------------------------------------


def _expect_x(model: SampleModel, fn: Callable, extra_points=()) -> float:
    """``E fn(X)`` over one observation of the model."""
    model._require_density()
    law = model.law
    if model.sample_dim == 1:
        lo, hi = law.quad_limits()
        return _quad(lambda x: float(fn(x) * law.pdf(x)), lo, hi, points=_law_points(law, extra_points))
    if model.sample_dim == 2:
        lo, hi = law.quad_limits()
        val, _ = integrate.dblquad(
            lambda y, x: float(fn(np.array([x, y])) * law.pdf(x) * law.pdf(y)),
            lo,
            hi,
            lo,
            hi,
            epsabs=1e-10,
            epsrel=1e-10,
        )
        return val
    raise UnsupportedModel("expectations are implemented for sample_dim 1 and 2")


def _fbar_kinks(model: SampleModel, ts) -> list[float]:
    """x-locations where fbar(t, x) may jump or kink, as quadrature hints."""
    law = model.law
    if model.sample_dim != 1 or not law.breakpoints:
        return []
    out = []
    for t in ts:
        t = float(t)
        if not model.linear:
            out += [b + t for b in law.breakpoints] + [b - t for b in law.breakpoints]
            continue
        for i, c in enumerate(model.coefs):
            others = [cc for k, cc in enumerate(model.coefs) if k != i]
            for combo in itertools.product(law.breakpoints, repeat=len(others)):
                out.append((t - sum(cc * bb for cc, bb in zip(others, combo))) / c)
    return out


def limit_covariance(model: SampleModel, s, t) -> float:
    """``Cov(fbar(s, X), fbar(t, X))``."""
    ms = float(model.m * model.fg(s))
    mt = float(model.m * model.fg(t))
    kinks = _fbar_kinks(model, [s, t])
    e = _expect_x(model, lambda x: float(model.fbar(s, x)) * float(model.fbar(t, x)), kinks)
    return e - ms * mt


def limit_variance(model: SampleModel, t) -> float:
    """``Var fbar(t, X) = E fbar(t, X)^2 - (m f_g(t))^2``, the pointwise limit variance."""
    return max(limit_covariance(model, t, t), 0.0)


def rho(model: SampleModel, u, v) -> float:
    """Intrinsic distance ``sqrt(Var(fbar(u, X) - fbar(v, X)))``."""
    if np.array_equal(np.asarray(u), np.asarray(v)):
        return 0.0
    mu = float(model.m * (model.fg(u) - model.fg(v)))
    kinks = _fbar_kinks(model, [u, v])
    e = _expect_x(model, lambda x: (float(model.fbar(u, x)) - float(model.fbar(v, x))) ** 2, kinks)
    return math.sqrt(max(e - mu * mu, 0.0))


# --- interpoint distance sigma^2 ------------------------------------------------


def density_power_integral(f: BaseLaw | str | Callable, power: int, dim: int = 1, limits=None) -> float:
    """``∫ f^power`` for a density on ``R^dim`` given as a base law (product over
    coordinates when ``dim > 1``) or as a callable with explicit ``limits``."""
    if isinstance(f, str):
        f = get_law(f)
    if isinstance(f, BaseLaw):
        if f.discrete:
            raise UnsupportedModel("discrete laws have no density")
        lo, hi = f.quad_limits()
        one = _quad(lambda x: float(f.pdf(x)) ** power, lo, hi, points=f.breakpoints)
        return one**dim
    if limits is None:
        raise ValueError("limits are required for a callable density")
    lo, hi = limits
    if dim != 1:
        raise UnsupportedModel("callable densities are one-dimensional")
    return _quad(lambda x: float(f(x)) ** power, lo, hi)


def theorem7_sigma(f: BaseLaw | str | Callable, dim: int = 1, limits=None) -> float:
    """``sigma^2 = 4 (∫ f^3 - (∫ f^2)^2)``, the limit variance of the local
    interpoint-distance process at the origin.  Zero iff ``f`` is constant on its support."""
    i2 = density_power_integral(f, 2, dim, limits)
    i3 = density_power_integral(f, 3, dim, limits)
    val = 4.0 * (i3 - i2 * i2)
    if not math.isfinite(val):
        raise ArithmeticError("divergent density power integral")
    # rounding can push the degenerate (uniform) case a hair below zero
    return 0.0 if abs(val) < 1e-12 else max(val, 0.0)


# --- simultaneous estimation of convolution powers -----------------------------


def _conv_power(law: BaseLaw, k: int) -> Callable:
    """Density of ``X_1 + ... + X_k``."""
    return lincomb_density(law.name, (1.0,) * k)


def convolution_cross_covariance(law: BaseLaw | str, i: int, j: int, s: float, t: float) -> float:
    """``Cov(i f^{*(i-1)}(s - X), j f^{*(j-1)}(t - X))``."""
    law = get_law(law) if isinstance(law, str) else law
    if law.discrete:
        raise UnsupportedModel("discrete laws have no density")
    if i < 2 or j < 2:
        raise ValueError("convolution orders start at 2")
    fi = _conv_power(law, i - 1)
    fj = _conv_power(law, j - 1)
    lo, hi = law.quad_limits()
    pts = list(law.breakpoints)
    for b in law.breakpoints:
        for c in range(0, max(i, j)):
            pts += [s - c * b - b, t - c * b - b, s - c * b, t - c * b]
    a = lambda x: float(fi(s - x))
    b = lambda x: float(fj(t - x))
    eab = _quad(lambda x: a(x) * b(x) * float(law.pdf(x)), lo, hi, points=pts)
    ea = _quad(lambda x: a(x) * float(law.pdf(x)), lo, hi, points=pts)
    eb = _quad(lambda x: b(x) * float(law.pdf(x)), lo, hi, points=pts)
    return i * j * (eab - ea * eb)


# --- bias ------------------------------------------------------------------------


def bias_prediction(model: SampleModel, K: Kernel, t, h: float) -> float:
    """Smoothing bias ``(K_h * f_g)(t) - f_g(t)``."""
    if K.d != 1:
        # same formula; kernel_mean handles d = 2
        return kernel_mean(model, K, h, t) - float(model.fg(t))
    t = float(t)
    s = h
    R = K.radius
    pts = [(t - b) / s for b in model.fg_breakpoints()]
    if K.compact:
        pts += [-K.support_radius, K.support_radius]
    f0 = float(model.fg(t))
    # integrate K(v) (f_g(t - s v) - f_g(t)) directly so the small difference
    # is not lost to cancellation
    fn = lambda v: float(K.func(np.array(v))) * (float(model.fg(t - s * v)) - f0)
    return _quad(fn, -R, R, points=pts, epsabs=1e-15)


def bias_slope(model: SampleModel, K: Kernel, t, hs, floor: float = 1e-12) -> tuple[float, np.ndarray]:
    """Least-squares slope of ``log|bias|`` against ``log h``.

    Bandwidths whose bias is below ``floor`` are dropped from the fit.
    Returns ``(slope, biases)``.
    """
    hs = np.asarray(hs, dtype=float)
    biases = np.array([bias_prediction(model, K, t, h) for h in hs])
    keep = np.abs(biases) >= floor
    if keep.sum() < 2:
        raise ArithmeticError("fewer than two bandwidths with measurable bias")
    slope = np.polyfit(np.log(hs[keep]), np.log(np.abs(biases[keep])), 1)[0]
    return float(slope), biases


def projection_variance_rhs(model: SampleModel, K: Kernel, h: float, t) -> float:
    """Upper bound ``((K^2)_h * f_g)(t) / h`` on ``E (pi_k Kbar_h)^2``."""
    K2 = Kernel(
        f"{K.name}^2",
        K.d,
        lambda u: K.func(u) ** 2,
        K.support_radius,
        K.order,
        K.indicator,
        K.tail_radius,
        K.radial,
        meta=K.meta,
    )
    return kernel_mean(model, K2, h, t) / h
