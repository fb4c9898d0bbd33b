"""Hoeffding projections of the symmetrized local kernel.

For a symmetric kernel ``L`` of ``m`` arguments and ``0 <= k <= m``,

    pi_k L(x_1..x_k) = sum over S ⊆ {1..k} of (-1)^(k-|S|) P^{m-|S|} L(x_S),

where ``P^{m-j} L(x_1..x_j)`` integrates the remaining ``m - j`` arguments
against the base law.  On discrete laws every ``P``-integral is an exact
finite sum; on continuous laws it is a one-dimensional convolution of the
kernel with a (partial) density of ``g``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import comb

from .estimator import InsufficientSample, _points, n_ordered_tuples
from .kernels import Kernel, eval_scaled
from .models import SampleModel, UnsupportedModel
from .theory import kernel_mean, projection_variance_rhs

__all__ = [
    "SymmetrizedKernel",
    "HoeffdingDecomposition",
    "DiscreteProjector",
    "ContinuousProjector",
    "projector",
    "project",
    "decompose",
    "check_degeneracy",
    "linear_term_vs_smoothed_empirical",
    "pi1_convolution",
    "pi1_direct",
    "projection_variance_bound",
    "degenerate_term",
    "CaseReport",
    "random_discrete_case",
    "verify_random_cases",
]


@dataclass(frozen=True)
class SymmetrizedKernel:
    """``Kbar_h(t, x_1..x_m)``: ``K_h(t - g(.))`` averaged over argument orders."""

    K: Kernel
    h: float
    model: SampleModel

    @property
    def m(self) -> int:
        return self.model.m

    def __call__(self, t, *xs):
        if len(xs) != self.m:
            raise ValueError(f"expected {self.m} arguments, got {len(xs)}")
        t = np.asarray(t, dtype=float)
        if self.model.symmetric:
            return eval_scaled(self.K, self.h, t - self.model.g(*xs))
        total = 0.0
        perms = list(itertools.permutations(range(self.m)))
        for p in perms:
            total = total + eval_scaled(self.K, self.h, t - self.model.g(*(xs[i] for i in p)))
        return total / len(perms)

    def at(self, t) -> Callable:
        return lambda *xs: self(t, *xs)


# --- discrete laws: exact sums ------------------------------------------------


class DiscreteProjector:
    """Exact projections of a symmetric kernel ``L`` of ``arity`` arguments.

    ``P``-integrals are memoized by the sorted tuple of fixed arguments
    (valid because ``L`` is symmetric).
    """

    def __init__(self, L: Callable, arity: int, points, probs):
        self.L = L
        self.arity = arity
        self.points = tuple(float(p) for p in points)
        self.probs = tuple(float(q) for q in probs)
        self._cache: dict[tuple, float] = {}

    def partial(self, xs) -> float:
        """``P^{arity - len(xs)} L(xs)``."""
        key = tuple(sorted(float(x) for x in xs))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        free = self.arity - len(key)
        if free < 0:
            raise ValueError("too many fixed arguments")
        total = 0.0
        for combo in itertools.product(range(len(self.points)), repeat=free):
            w = math.prod(self.probs[c] for c in combo)
            if w == 0.0:
                continue
            args = key + tuple(self.points[c] for c in combo)
            total += w * float(self.L(*args))
        self._cache[key] = total
        return total

    def mean(self) -> float:
        return self.partial(())

    def project(self, k: int, xs) -> float:
        xs = tuple(float(x) for x in xs)
        if not 0 <= k <= self.arity:
            raise ValueError(f"projection order must lie in [0, {self.arity}], got {k}")
        if len(xs) != k:
            raise ValueError(f"pi_{k} takes {k} arguments, got {len(xs)}")
        total = 0.0
        for size in range(k + 1):
            sign = -1.0 if (k - size) % 2 else 1.0
            for S in itertools.combinations(range(k), size):
                total += sign * self.partial(tuple(xs[i] for i in S))
        return total

    def projected_kernel(self, k: int) -> Callable:
        """``pi_k L`` as a symmetric kernel of ``k`` arguments."""
        return lambda *xs: self.project(k, xs)


# --- continuous laws: convolution form ----------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _composite_rule(lo: float, hi: float, panels: int):
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


class ContinuousProjector:
    """Projections of ``Kbar_h(t, .)`` for a model with densities.

    ``P^{m-j} Kbar(x_1..x_j)`` averages, over the ways of placing the fixed
    arguments among the ``m`` positions, the convolution of ``K_h`` with the
    density of ``g`` given those arguments.
    """

    def __init__(self, Kbar: SymmetrizedKernel, t, panels: int = 64):
        model = Kbar.model
        model._require_density()
        if model.sample_dim != 1 or Kbar.K.d != 1:
            raise UnsupportedModel("continuous projections are implemented for d = 1")
        self.Kbar = Kbar
        self.model = model
        self.t = float(t)
        self.K = Kbar.K
        self.h = Kbar.h
        self._mean = None
        self._cache: dict[tuple, float] = {}
        self._panels = panels
        self._nodes, self._weights = _composite_rule(-self.K.radius, self.K.radius, panels)

    @property
    def arity(self) -> int:
        return self.model.m

    def _placements(self, j: int):
        return list(itertools.permutations(range(self.model.m), j))

    def _cond_density(self, s, placement, xs):
        """Density of g at ``s`` with ``xs`` held at positions ``placement``."""
        model = self.model
        if model.linear:
            return model.partial_density(s, dict(zip(placement, xs)))
        # distance, one argument fixed
        (x,) = xs
        return 0.5 * model.fbar(s, x)

    def mean(self) -> float:
        if self._mean is None:
            self._mean = kernel_mean(self.model, self.K, self.h, self.t)
        return self._mean

    def partial(self, xs) -> float:
        """``P^{m-j} Kbar(xs)`` by adaptive quadrature (scalar arguments)."""
        xs = tuple(sorted(float(x) for x in xs))
        j = len(xs)
        m = self.model.m
        if j == 0:
            return self.mean()
        if j == m:
            return float(self.Kbar(self.t, *xs))
        hit = self._cache.get(xs)
        if hit is not None:
            return hit
        if not self.model.linear and j != 1:
            raise UnsupportedModel("distance models have m = 2")
        s = self.h
        R = self.K.radius
        vals = []
        for placement in self._placements(j):
            fn = lambda v: float(self.K.func(np.array(v))) * float(
                self._cond_density(self.t - s * v, placement, xs)
            )
            val, _ = integrate.quad(fn, -R, R, epsabs=1e-12, epsrel=1e-10, limit=400)
            vals.append(val)
        self._cache[xs] = float(np.mean(vals))
        return self._cache[xs]

    def partial_vec(self, xs) -> np.ndarray:
        """Vectorized ``P^{m-j} Kbar`` over arrays of arguments (fixed Gauss rule)."""
        xs = [np.asarray(x, dtype=float) for x in xs]
        j = len(xs)
        m = self.model.m
        if j == 0:
            return np.full(1, self.mean())
        if j == m:
            return np.asarray(self.Kbar(self.t, *xs), dtype=float)
        places = self._placements(j)
        if self._free_variable_rule(j):
            return self._partial_over_free(places, xs)
        v = self._nodes
        kw = self.K.func(v) * self._weights
        s = self.h
        acc = 0.0
        for placement in places:
            dens = self._cond_density(
                self.t - s * v[None, :], placement, [x[:, None] for x in xs]
            )
            acc = acc + dens @ kw
        return acc / len(places)

    def _free_variable_rule(self, j: int) -> bool:
        # with one free argument, integrate over whichever window is narrower:
        # the kernel's (in g) or the law's (in the free observation)
        model = self.model
        if not model.linear or j != model.m - 1:
            return False
        lo, hi = model.law.quad_limits()
        c_min = min(abs(c) for c in model.coefs)
        return (hi - lo) * max(abs(c) for c in model.coefs) < 2.0 * self.K.radius * self.h and c_min > 0

    def _partial_over_free(self, places, xs) -> np.ndarray:
        model = self.model
        law = model.law
        lo, hi = law.quad_limits()
        edges = sorted({lo, hi, *(b for b in law.breakpoints if lo < b < hi)})
        nodes, weights = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            y, w = _composite_rule(a, b, max(1, self._panels // (len(edges) - 1)))
            nodes.append(y)
            weights.append(w)
        y = np.concatenate(nodes)
        fw = np.asarray(law.pdf(y), dtype=float) * np.concatenate(weights)
        acc = 0.0
        for placement in places:
            free = next(i for i in range(model.m) if i not in placement)
            g = sum(model.coefs[p] * x[:, None] for p, x in zip(placement, xs)) + model.coefs[free] * y[None, :]
            acc = acc + np.asarray(eval_scaled(self.K, self.h, self.t - g), dtype=float) @ fw
        return acc / len(places)

    def project(self, k: int, xs) -> float:
        if not 0 <= k <= self.model.m:
            raise ValueError(f"projection order must lie in [0, {self.model.m}], got {k}")
        if len(xs) != k:
            raise ValueError(f"pi_{k} takes {k} arguments, got {len(xs)}")
        total = 0.0
        for size in range(k + 1):
            sign = -1.0 if (k - size) % 2 else 1.0
            for S in itertools.combinations(range(k), size):
                total += sign * self.partial(tuple(xs[i] for i in S))
        return total

    def project_vec(self, k: int, xs) -> np.ndarray:
        xs = [np.asarray(x, dtype=float) for x in xs]
        total = 0.0
        for size in range(k + 1):
            sign = -1.0 if (k - size) % 2 else 1.0
            for S in itertools.combinations(range(k), size):
                total = total + sign * self.partial_vec([xs[i] for i in S])
        return np.asarray(total, dtype=float)


def projector(Kbar: SymmetrizedKernel, t):
    law = Kbar.model.law
    if law.discrete:
        return DiscreteProjector(Kbar.at(t), Kbar.m, law.points, law.probs)
    if Kbar.m > 3:
        raise UnsupportedModel("continuous projections are limited to m <= 3")
    return ContinuousProjector(Kbar, t)


def project(Kbar: SymmetrizedKernel, k: int, t, xs) -> float:
    """``pi_k Kbar(t, x_1..x_k)``."""
    if k > Kbar.m or k < 0:
        raise ValueError(f"projection order must lie in [0, {Kbar.m}], got {k}")
    return projector(Kbar, t).project(k, tuple(xs))


# --- decomposition --------------------------------------------------------------


@dataclass
class HoeffdingDecomposition:
    t: float
    terms: np.ndarray  # terms[k] = U_n^{(k)}(pi_k Kbar); terms[0] = E Kbar
    weights: np.ndarray  # binomial(m, k)
    lhs: float  # U_n^{(m)}(Kbar) - E Kbar
    residual: float

    @property
    def rhs(self) -> float:
        return float(np.dot(self.weights[1:], self.terms[1:]))


def _u_stat(L: Callable, x, k: int) -> float:
    """``U_n^{(k)}(L)`` for a kernel of ``k`` scalar arguments."""
    n = len(x)
    if k == 0:
        return float(L())
    total = 0.0
    for idx in itertools.permutations(range(n), k):
        total += float(L(*(x[i] for i in idx)))
    return total / n_ordered_tuples(n, k)


def decompose(sample, Kbar: SymmetrizedKernel, t) -> HoeffdingDecomposition:
    """All terms of the Hoeffding decomposition at ``t`` and the identity's residual."""
    x = [float(v) for v in np.asarray(_points(sample)).reshape(-1)]
    m = Kbar.m
    if len(x) < m:
        raise InsufficientSample(f"need at least m = {m} observations, got {len(x)}")
    proj = projector(Kbar, t)
    cache: dict[tuple, float] = {}

    def pik(k):
        def f(*xs):
            key = (k,) + tuple(sorted(xs))
            if key not in cache:
                cache[key] = proj.project(k, xs)
            return cache[key]

        return f

    mean = proj.mean()
    terms = np.empty(m + 1)
    terms[0] = mean
    for k in range(1, m + 1):
        terms[k] = _u_stat(pik(k), x, k)
    weights = np.array([comb(m, k, exact=True) for k in range(m + 1)], dtype=float)
    lhs = _u_stat(lambda *xs: float(Kbar(t, *xs)), x, m) - mean
    residual = abs(lhs - float(np.dot(weights[1:], terms[1:])))
    return HoeffdingDecomposition(float(t), terms, weights, lhs, residual)


def check_degeneracy(Kbar: SymmetrizedKernel, k: int, t) -> float:
    """``max over x_2..x_k`` of ``|E pi_k Kbar(t, X, x_2..x_k)|`` (discrete laws)."""
    law = Kbar.model.law
    if not law.discrete:
        raise UnsupportedModel("exact degeneracy checks need a discrete base law")
    if not 1 <= k <= Kbar.m:
        raise ValueError(f"k must lie in [1, {Kbar.m}]")
    proj = projector(Kbar, t)
    worst = 0.0
    for rest in itertools.product(law.points, repeat=k - 1):
        e = sum(p * proj.project(k, (x,) + rest) for x, p in zip(law.points, law.probs))
        worst = max(worst, abs(e))
    return worst


# --- linear term and the smoothed empirical process --------------------------------


def pi1_convolution(model: SampleModel, K: Kernel, h: float, t: float, x: float) -> float:
    """``m * pi_1 Kbar_h(t, x) = ∫ (fbar(t-u, x) - m f_g(t-u)) K_h(u) du``."""
    m = model.m
    R = K.radius * h
    fn = lambda u: (float(model.fbar(t - u, x)) - m * float(model.fg(t - u))) * float(eval_scaled(K, h, u))
    pts = _kinks(model, K, h, t, [x])
    val, _ = integrate.quad(fn, -R, R, epsabs=1e-13, epsrel=1e-12, limit=500, points=pts)
    return val


def _kinks(model, K, h, t, xs):
    R = K.radius * h
    pts = []
    if K.compact:
        pts += [-R, R]
    for b in model.fg_breakpoints():
        pts.append(t - b)
    if model.law.breakpoints:
        for x in xs:
            for b in model.law.breakpoints:
                for c in model.coefs or (1.0, -1.0):
                    pts += [t - c * x - b, t - c * x + b, t - x - b, t + x - b, t - b - x]
    pts = sorted({p for p in pts if -R < p < R})
    return pts or None


def pi1_direct(model: SampleModel, K: Kernel, h: float, t: float, x: float) -> float:
    """``m * pi_1 Kbar_h(t, x)`` by integrating the other argument against the law (m = 2)."""
    if model.m != 2:
        raise UnsupportedModel("the direct route is implemented for m = 2")
    law = model.law
    lo, hi = law.quad_limits()
    f = lambda y, a, b: float(eval_scaled(K, h, t - model.g(a, b))) * float(law.pdf(y))
    pts = list(law.breakpoints)
    # kernel support edges in y
    a1, _ = integrate.quad(lambda y: f(y, x, y), lo, hi, epsabs=1e-13, limit=500, points=_y_points(model, K, h, t, x, 0, pts, lo, hi))
    a2, _ = integrate.quad(lambda y: f(y, y, x), lo, hi, epsabs=1e-13, limit=500, points=_y_points(model, K, h, t, x, 1, pts, lo, hi))
    return a1 + a2 - 2.0 * kernel_mean(model, K, h, t)


def _y_points(model, K, h, t, x, pos, pts, lo, hi):
    out = list(pts)
    if K.compact:
        r = K.support_radius * h
        for e in (t - r, t + r):
            if model.linear:
                c_x, c_y = (model.coefs[0], model.coefs[1]) if pos == 0 else (model.coefs[1], model.coefs[0])
                out.append((e - c_x * x) / c_y)
            else:
                out += [x + e, x - e]
    out = sorted({p for p in out if lo < p < hi})
    return out or None


def linear_term_vs_smoothed_empirical(sample, model: SampleModel, K: Kernel, lam: float, h_n: float, t: float):
    """Both sides of ``sqrt(n) m U_n^{(1)}(pi_1 Kbar) = (vbar_n * K_h)(t)``.

    ``lhs`` sums per-observation convolutions; ``rhs`` convolves the
    empirical process ``vbar_n(s) = n^{-1/2} sum_i (fbar(s, X_i) - m f_g(s))``
    once.
    """
    x = np.asarray(_points(sample), dtype=float).reshape(-1)
    n = x.size
    h = lam * h_n
    m = model.m
    lhs = sum(pi1_convolution(model, K, h, t, xi) for xi in x) / math.sqrt(n)

    def vbar(s):
        return float(np.sum(model.fbar(s, x) - m * model.fg(s))) / math.sqrt(n)

    R = K.radius * h
    pts = _kinks(model, K, h, t, x)
    rhs, _ = integrate.quad(
        lambda u: vbar(t - u) * float(eval_scaled(K, h, u)), -R, R, epsabs=1e-13, epsrel=1e-12, limit=1000, points=pts
    )
    return lhs, rhs


# --- variance bound and degenerate term ------------------------------------------


def projection_variance_bound(
    model: SampleModel, K: Kernel, h: float, k: int, t: float, draws: int = 100_000, seed: int = 0
):
    """Monte Carlo ``E (pi_k Kbar_h)^2`` against the bound ``((K^2)_h * f_g)(t) / h``.

    Returns ``(lhs, rhs, standard_error)``.
    """
    model._require_density()
    if model.m > 3:
        raise UnsupportedModel("variance bound check is limited to m <= 3")
    if not 1 <= k <= model.m:
        raise ValueError(f"k must lie in [1, {model.m}]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    proj = ContinuousProjector(SymmetrizedKernel(K, h, model), t)
    xs = [model.law.draw(rng, draws) for _ in range(k)]
    vals = proj.project_vec(k, xs) ** 2
    lhs = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(draws))
    rhs = projection_variance_rhs(model, K, h, t)
    return lhs, rhs, se


def degenerate_term(sample, model: SampleModel, K: Kernel, h: float, t_grid, u_values=None) -> np.ndarray:
    """``sqrt(n) U_n^{(2)}(pi_2 Kbar_h)(t)`` on a grid, for m = 2 models.

    Uses ``U_n^{(2)}(pi_2 Kbar) = U_n(t) - (2/n) sum_i P Kbar(X_i) + E Kbar``.
    ``u_values`` may carry precomputed ``U_n(t)`` on the grid.
    """
    from .estimator import u_naive_grid

    if model.m != 2:
        raise UnsupportedModel("the degenerate term is implemented for m = 2")
    x = np.asarray(_points(sample), dtype=float).reshape(-1)
    n = x.size
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if u_values is None:
        u_values = u_naive_grid(x, model, K, t_grid, h)
    Kbar = SymmetrizedKernel(K, h, model)
    out = np.empty(t_grid.size)
    for i, t in enumerate(t_grid):
        proj = ContinuousProjector(Kbar, t)
        p1 = proj.partial_vec([x])
        out[i] = u_values[i] - 2.0 * float(np.mean(p1)) + proj.mean()
    return math.sqrt(n) * out


# --- randomized exactness cases ----------------------------------------------------


@dataclass
class CaseReport:
    case_id: int
    model: str
    kernel: str
    n: int
    residual: float
    degeneracy: float


def random_discrete_case(rng: np.random.Generator):
    """A random discrete model (support <= 4, m <= 3), kernel, bandwidth, t and sample (n <= 6)."""
    from .kernels import get_kernel
    from .models import discrete_law, make_model

    size = int(rng.integers(1, 5))
    points = np.round(rng.uniform(-1.0, 1.0, size), 3)
    while np.unique(points).size < size:
        points = np.round(rng.uniform(-1.0, 1.0, size), 3)
    probs = rng.dirichlet(np.ones(size))
    probs[-1] = 1.0 - probs[:-1].sum()
    law = discrete_law(points, probs)
    m = int(rng.integers(2, 4))
    kind = rng.choice(["sum", "linear", "difference"]) if m == 2 else rng.choice(["sum", "linear"])
    if kind == "linear":
        model = make_model(law, "linear", coefs=np.round(rng.uniform(-2.0, 2.0, m), 2))
    else:
        model = make_model(law, str(kind), m=m)
    K = get_kernel(str(rng.choice(["uniform", "epanechnikov", "gaussian"])))
    h = float(rng.uniform(0.3, 2.0))
    t = float(rng.uniform(-1.5, 1.5))
    n = int(rng.integers(model.m, 7))
    x = law.draw(rng, n)
    return model, K, h, t, x


def verify_random_cases(cases: int = 100, seed: int = 0) -> list[CaseReport]:
    """Decomposition residual and worst degeneracy violation on random discrete cases."""
    out = []
    for i in range(cases):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        model, K, h, t, x = random_discrete_case(rng)
        Kbar = SymmetrizedKernel(K, h, model)
        dec = decompose(x, Kbar, t)
        deg = max(check_degeneracy(Kbar, k, t) for k in range(1, model.m + 1))
        out.append(CaseReport(i, model.name, K.name, len(x), dec.residual, deg))
    return out
