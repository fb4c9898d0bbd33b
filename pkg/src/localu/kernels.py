"""Kernel functions on R^d and the volume-scaling rule.

Bandwidths here scale *volume*, not length: for a kernel ``K`` on ``R^d``
and ``h > 0``,

    K_h(t) = h^{-1} K(t / h^{1/d}),

so the per-axis length scale is ``h^{1/d}``.  In one dimension this is the
familiar ``K(t/h)/h``.  Most KDE software scales per axis; this module does
not.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "Kernel",
    "BandwidthSpec",
    "KernelError",
    "eval_scaled",
    "check_moments",
    "make_higher_order",
    "product_kernel",
    "get_kernel",
    "kernel_norm",
    "tail_mass",
    "KERNEL_NAMES",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)


class KernelError(ValueError):
    """Invalid kernel arguments, or a kernel construction that cannot be done."""


@dataclass(frozen=True)
class Kernel:
    """A kernel on ``R^d``.

    ``func`` is vectorized: for ``d == 1`` it maps an array of any shape
    elementwise, for ``d > 1`` it maps an array of shape ``(..., d)`` to
    shape ``(...)``.  ``support_radius`` is ``inf`` for unbounded support;
    ``tail_radius`` is where ``|K|`` drops below 1e-14 and is used to
    truncate quadrature domains.
    """

    name: str
    d: int
    func: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    order: int = 2
    indicator: bool = False
    tail_radius: float | None = None
    # radial kernels only depend on |u|; used by the fast distance path
    radial: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, u):
        return self.func(np.asarray(u, dtype=float))

    @property
    def compact(self) -> bool:
        return math.isfinite(self.support_radius)

    @property
    def box_radius(self) -> float:
        """Half-width of a coordinate box containing the (effective) support."""
        return float(self.meta.get("axis_radius", self.radius))

    @property
    def radius(self) -> float:
        """Radius outside of which the kernel is (numerically) zero."""
        if self.compact:
            return self.support_radius
        return float(self.tail_radius)


@dataclass(frozen=True)
class BandwidthSpec:
    h_n: float
    lambda_grid: tuple[float, ...]
    a: float
    b: float

    def __post_init__(self):
        if not self.h_n > 0:
            raise KernelError(f"h_n must be positive, got {self.h_n}")
        if not self.lambda_grid:
            raise KernelError("lambda_grid is empty")
        if not 0 < self.a <= self.b < math.inf:
            raise KernelError(f"need 0 < a <= b < inf, got a={self.a}, b={self.b}")
        grid = np.asarray(self.lambda_grid, dtype=float)
        if np.any(np.diff(grid) <= 0):
            raise KernelError("lambda_grid must be strictly increasing")
        if grid[0] < self.a or grid[-1] > self.b:
            raise KernelError("lambda_grid must lie inside [a, b]")

    @classmethod
    def from_grid(cls, h_n: float, lambda_grid) -> "BandwidthSpec":
        grid = tuple(float(v) for v in lambda_grid)
        return cls(h_n, grid, min(grid), max(grid))


def eval_scaled(K: Kernel, h: float, t) -> np.ndarray | float:
    """Return ``K_h(t) = h^{-1} K(t / h^{1/d})``."""
    if not h > 0:
        raise KernelError(f"bandwidth must be positive, got {h}")
    t = np.asarray(t, dtype=float)
    if K.d > 1 and t.shape[-1:] != (K.d,):
        raise KernelError(f"point dimension {t.shape[-1:]} does not match kernel d={K.d}")
    if h == 1.0:
        out = K.func(t)
    else:
        out = K.func(t / h ** (1.0 / K.d)) / h
    return float(out) if np.ndim(out) == 0 else out


# --- concrete kernels -------------------------------------------------------


def _uniform(u):
    return np.where(np.abs(u) <= 0.5, 1.0, 0.0)


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _gaussian(u):
    return np.exp(-0.5 * u * u) / SQRT_2PI


def _gaussian4(u):
    return 0.5 * (3.0 - u * u) * np.exp(-0.5 * u * u) / SQRT_2PI


def _ball_volume(d: int) -> float:
    # exact values in low dimension keep indicator heights free of rounding
    exact = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}
    return exact.get(d, math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0))


def _gaussian_nd(d: int):
    norm = (2.0 * math.pi) ** (-d / 2.0)

    def f(u):
        return norm * np.exp(-0.5 * np.sum(u * u, axis=-1))

    return f


def _indicator_ball(d: int):
    vol = _ball_volume(d)
    if d == 1:
        # I{|u| <= 1}/2; closed interval
        return lambda u: np.where(np.abs(u) <= 1.0, 1.0 / vol, 0.0)

    def f(u):
        r2 = np.sum(u * u, axis=-1)
        return np.where(r2 <= 1.0, 1.0 / vol, 0.0)

    return f


def gaussian(d: int = 1) -> Kernel:
    if d == 1:
        return Kernel("gaussian", 1, _gaussian, math.inf, 2, tail_radius=8.5)
    return Kernel("gaussian", d, _gaussian_nd(d), math.inf, 2, tail_radius=9.0)


def uniform() -> Kernel:
    return Kernel("uniform", 1, _uniform, 0.5, 2, indicator=True)


def epanechnikov() -> Kernel:
    return Kernel("epanechnikov", 1, _epanechnikov, 1.0, 2)


def gaussian4() -> Kernel:
    return Kernel("gaussian4", 1, _gaussian4, math.inf, 4, tail_radius=9.0)


def indicator_ball(d: int = 1) -> Kernel:
    """``I_D / Vol(D)`` with ``D`` the closed Euclidean unit ball."""
    return Kernel("indicator-ball", d, _indicator_ball(d), 1.0, 2, indicator=True)


_FACTORIES = {
    "uniform": lambda d: uniform(),
    "epanechnikov": lambda d: epanechnikov(),
    "gaussian": gaussian,
    "gaussian4": lambda d: gaussian4(),
    "indicator-ball": indicator_ball,
}

KERNEL_NAMES = tuple(_FACTORIES)


def get_kernel(name: str, d: int = 1) -> Kernel:
    """Look up a kernel by its CLI name."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise KernelError(f"unknown kernel {name!r}; choose from {', '.join(KERNEL_NAMES)}") from None
    K = factory(d)
    if K.d != d:
        if d > 1 and K.d == 1:
            return product_kernel(K, d)
        raise KernelError(f"kernel {name!r} is not available in dimension {d}")
    return K


def product_kernel(K: Kernel, d: int) -> Kernel:
    """Product of ``d`` copies of a one-dimensional kernel.

    This is the only route to higher-order kernels in ``d > 1``.
    """
    if K.d != 1:
        raise KernelError("product_kernel needs a one-dimensional factor")
    f1 = K.func

    def f(u):
        u = np.asarray(u, dtype=float)
        return np.prod(f1(u), axis=-1)

    radius = K.support_radius * math.sqrt(d) if K.compact else math.inf
    tail = None if K.compact else K.radius * math.sqrt(d)
    return Kernel(
        f"{K.name}^{d}",
        d,
        f,
        radius,
        K.order,
        indicator=K.indicator,
        tail_radius=tail,
        radial=False,
        meta={"axis_radius": K.radius},
    )


# --- quadrature helpers -----------------------------------------------------


def _quad1(fn, K: Kernel, epsabs=1e-10, epsrel=1e-10):
    R = K.radius
    return integrate.quad(fn, -R, R, epsabs=epsabs, epsrel=epsrel, limit=400)


def _integrate(fn, K: Kernel, epsabs: float = 1e-10) -> float:
    """Integrate ``fn(u) * K(u)``-type integrands over the kernel's support."""
    if K.d == 1:
        with np.errstate(all="ignore"):
            val, err = _quad1(lambda u: float(fn(np.array(u))), K, epsabs=epsabs)
        if not math.isfinite(val) or err > max(1e3 * epsabs, 1e-6):
            raise ArithmeticError(f"quadrature did not converge (error estimate {err:.3g})")
        return val
    if K.d == 2:
        if K.radial:
            R = K.radius
            lo = lambda x: -math.sqrt(max(R * R - x * x, 0.0))
            hi = lambda x: math.sqrt(max(R * R - x * x, 0.0))
        else:
            R = K.box_radius
            lo, hi = -R, R
        val, err = integrate.dblquad(
            lambda y, x: float(fn(np.array([x, y]))), -R, R, lo, hi, epsabs=epsabs, epsrel=1e-10
        )
        if not math.isfinite(val) or err > max(1e3 * epsabs, 1e-6):
            raise ArithmeticError(f"quadrature did not converge (error estimate {err:.3g})")
        return val
    raise KernelError("adaptive quadrature is implemented for d = 1, 2 only")


def _multi_indices(d: int, total: int):
    for s in itertools.product(range(total + 1), repeat=d):
        if sum(s) <= total:
            yield s


def check_moments(K: Kernel, max_order: int) -> dict[tuple[int, ...], float]:
    """Return ``{s: ∫ t^s K(t) dt}`` for every multi-index with ``|s| <= max_order``.

    One-dimensional multi-indices are 1-tuples, ``(0,), (1,), ...``.
    Raises ``ArithmeticError`` when a moment integral fails to converge.
    """
    table = {}
    for s in sorted(_multi_indices(K.d, max_order), key=lambda s: (sum(s), s)):
        exps = np.array(s, dtype=float)
        if K.d == 1:
            fn = lambda u, p=exps[0]: u**p * K.func(u)
        else:
            fn = lambda u, p=exps: np.prod(u**p) * K.func(u)
        table[s] = _integrate(fn, K)
    return table


def kernel_norm(K: Kernel, p: float = 1.0) -> float:
    """``‖K‖_p`` by quadrature."""
    val = _integrate(lambda u: np.abs(K.func(u)) ** p, K, epsabs=1e-12)
    return val ** (1.0 / p)


def tail_mass(K: Kernel, radius: float) -> float:
    """``∫_{|u| > radius} |K(u)| du``."""
    if radius <= 0:
        return kernel_norm(K, 1.0)
    if K.compact and radius >= K.support_radius:
        return 0.0
    if K.d != 1:
        total = kernel_norm(K, 1.0)
        inner = _integrate(
            lambda u: np.abs(K.func(u)) * (np.sqrt(np.sum(u * u)) <= radius), K, epsabs=1e-12
        )
        return max(total - inner, 0.0)
    hi = K.radius
    if radius >= hi:
        return 0.0
    val, _ = integrate.quad(lambda u: abs(float(K.func(np.array(u)))), radius, hi, epsabs=1e-13, limit=200)
    return 2.0 * val


def make_higher_order(K: Kernel, k: int) -> Kernel:
    """Turn a symmetric second-order kernel into an order-``k`` kernel.

    The result is ``p(u) K(u)`` with ``p`` the even polynomial of degree
    ``k - 2`` for which ``∫ pK = 1`` and the moments of orders 1..k-1 vanish.
    It can take negative values.
    """
    if K.d != 1:
        raise KernelError("higher-order construction is one-dimensional; use product_kernel for d > 1")
    if k < 2 or k % 2:
        raise KernelError(f"order must be an even integer >= 2, got {k}")
    if K.order != 2:
        raise KernelError(f"base kernel must have order 2, got {K.order}")
    if k == 2:
        return K
    half = k // 2
    mom = check_moments(K, 2 * k - 2)
    M = np.array([[mom[(2 * (i + j),)] for j in range(half)] for i in range(half)])
    rhs = np.zeros(half)
    rhs[0] = 1.0
    if np.linalg.cond(M) > 1e12:
        raise KernelError("moment system is singular")
    coef = np.linalg.solve(M, rhs)
    base = K.func

    def f(u):
        u2 = u * u
        return np.polynomial.polynomial.polyval(u2, coef) * base(u)

    return Kernel(
        f"{K.name}-order{k}",
        1,
        f,
        K.support_radius,
        k,
        tail_radius=None if K.compact else K.radius + 1.0,
        meta={"coef": tuple(coef)},
    )
