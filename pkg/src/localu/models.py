"""Data-generating models and their analytic densities.

A :class:`SampleModel` couples a base law for the observations with the
function ``g`` whose density is being estimated.  Where closed forms or
cheap quadratures exist the model also knows

* ``fbar(t, x)`` -- the sum over argument positions of the conditional
  density of ``g(X_1..X_m)`` at ``t`` given that one argument equals ``x``;
* ``fg(t)`` -- the density of ``g(X_1..X_m)``, which equals
  ``E fbar(t, X) / m``.

Discrete base laws exist only so that Hoeffding identities can be checked by
exact finite sums.  Every density-based call on them raises
:class:`UnsupportedModel`.
"""

from __future__ import annotations

import functools
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "BaseLaw",
    "SampleModel",
    "Sample",
    "UnsupportedModel",
    "ModelSpecError",
    "get_law",
    "discrete_law",
    "parse_model",
    "make_model",
    "describe_model",
    "rng_for",
    "sample",
    "fbar",
    "fg",
    "lincomb_density",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)
GRID_STEP = 1e-3


class UnsupportedModel(ValueError):
    """The requested analytic quantity is not available for this model."""


class ModelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class BaseLaw:
    """Univariate law of one coordinate of an observation."""

    name: str
    pdf: Callable | None
    lo: float
    hi: float
    draw: Callable  # (rng, size) -> ndarray
    breakpoints: tuple[float, ...] = ()
    points: tuple[float, ...] | None = None
    probs: tuple[float, ...] | None = None

    @property
    def discrete(self) -> bool:
        return self.points is not None

    def quad_limits(self) -> tuple[float, float]:
        lo = self.lo if math.isfinite(self.lo) else -12.0
        hi = self.hi if math.isfinite(self.hi) else (40.0 if self.lo == 0 else 12.0)
        return lo, hi

    def expect(self, fn: Callable[[float], float], epsabs: float = 1e-11) -> float:
        """``E fn(X)`` by adaptive quadrature (continuous) or exact sum (discrete)."""
        if self.discrete:
            return float(sum(p * fn(x) for x, p in zip(self.points, self.probs)))
        lo, hi = self.quad_limits()
        val, _ = integrate.quad(
            lambda x: fn(x) * self.pdf(x), lo, hi, epsabs=epsabs, epsrel=1e-11, limit=400
        )
        return val


def _normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def _uniform_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0.0) & (x <= 1.0), 1.0, 0.0)


def _triangular_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0.0) & (x <= 1.0), 2.0 * x, 0.0)


def _exponential_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, np.exp(-np.maximum(x, 0.0)), 0.0)


def _discrete(points, probs) -> BaseLaw:
    points = tuple(float(p) for p in points)
    probs = tuple(float(q) for q in probs)
    if len(points) != len(probs) or not points:
        raise ModelSpecError("discrete law needs as many probabilities as support points")
    if len(set(points)) != len(points):
        raise ModelSpecError("discrete support points must be distinct")
    if any(q < 0 for q in probs) or abs(sum(probs) - 1.0) > 1e-12:
        raise ModelSpecError(f"discrete probabilities must be nonnegative and sum to 1, got {probs}")
    pts = np.array(points)
    pr = np.array(probs)

    def draw(rng, size):
        return pts[rng.choice(len(pts), size=size, p=pr)]

    label = f"discrete({','.join(f'{p:g}' for p in points)};{','.join(f'{q:g}' for q in probs)})"
    return BaseLaw(label, None, min(points), max(points), draw, points=points, probs=probs)


def discrete_law(points, probs) -> BaseLaw:
    """Finite law on ``points`` with the given probabilities."""
    return _discrete(points, probs)


_LAWS = {
    "uniform01": lambda: BaseLaw(
        "uniform01", _uniform_pdf, 0.0, 1.0, lambda rng, size: rng.random(size), (0.0, 1.0)
    ),
    "normal01": lambda: BaseLaw(
        "normal01", _normal_pdf, -math.inf, math.inf, lambda rng, size: rng.standard_normal(size)
    ),
    "triangular": lambda: BaseLaw(
        "triangular", _triangular_pdf, 0.0, 1.0, lambda rng, size: np.sqrt(rng.random(size)), (0.0, 1.0)
    ),
    "exponential1": lambda: BaseLaw(
        "exponential1", _exponential_pdf, 0.0, math.inf, lambda rng, size: rng.standard_exponential(size), (0.0,)
    ),
}

_DISCRETE_RE = re.compile(r"^discrete\(([^;]*);([^)]*)\)$")


def get_law(name: str) -> BaseLaw:
    name = name.strip()
    m = _DISCRETE_RE.match(name)
    if m:
        pts = [float(v) for v in m.group(1).split(",") if v.strip()]
        prs = [float(v) for v in m.group(2).split(",") if v.strip()]
        return _discrete(pts, prs)
    try:
        return _LAWS[name]()
    except KeyError:
        raise ModelSpecError(
            f"unknown base law {name!r}; choose from {', '.join(_LAWS)} or discrete(points;probs)"
        ) from None


# --- densities of linear combinations --------------------------------------


def _irwin_hall(widths):
    """Density of ``sum w_r U_r`` for independent U(0,1) and positive widths."""
    k = len(widths)
    norm = math.factorial(k - 1) * math.prod(widths)
    shifts = []
    for size in range(k + 1):
        for S in itertools.combinations(range(k), size):
            shifts.append(((-1) ** size, sum(widths[i] for i in S)))
    total = sum(widths)

    def f(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for sign, shift in shifts:
            out = out + sign * np.maximum(s - shift, 0.0) ** (k - 1)
        out = out / norm
        return np.where((s >= 0) & (s <= total), np.maximum(out, 0.0), 0.0)

    return f


def _grid_density(pdf, lo, hi, coefs):
    """Density of ``sum c_r X_r`` by iterated discrete convolution on a fixed grid."""
    step = GRID_STEP
    dens = None
    origin = 0.0
    for c in coefs:
        a, b = sorted((c * lo, c * hi))
        x = np.arange(math.floor(a / step), math.ceil(b / step) + 1) * step
        v = pdf(x / c) / abs(c)
        # trapezoid end weights: the base densities may jump at their support ends
        v[0] *= 0.5
        v[-1] *= 0.5
        if dens is None:
            dens, origin = v, x[0]
        else:
            dens = np.convolve(dens, v) * step
            origin = origin + x[0]
    xs = origin + step * np.arange(dens.size)

    def f(s):
        return np.interp(s, xs, dens, left=0.0, right=0.0)

    return f


@functools.lru_cache(maxsize=256)
def lincomb_density(law_name: str, coefs: tuple[float, ...]) -> Callable:
    """Density of ``sum_r c_r X_r`` for i.i.d. one-dimensional ``X_r``."""
    law = get_law(law_name)
    if law.discrete:
        raise UnsupportedModel("discrete laws have no density")
    coefs = tuple(float(c) for c in coefs if c != 0.0)
    if not coefs:
        raise UnsupportedModel("degenerate linear combination")
    if law.name == "normal01":
        sd = math.sqrt(sum(c * c for c in coefs))
        return lambda s: _normal_pdf(np.asarray(s, dtype=float) / sd) / sd
    if len(coefs) == 1:
        c = coefs[0]
        return lambda s: law.pdf(np.asarray(s, dtype=float) / c) / abs(c)
    if law.name == "uniform01":
        base = _irwin_hall([abs(c) for c in coefs])
        offset = sum(c for c in coefs if c < 0)
        return lambda s: base(np.asarray(s, dtype=float) - offset)
    if len(coefs) == 2:
        c1, c2 = coefs
        lo, hi = law.quad_limits()
        pts = [c1 * b for b in law.breakpoints]

        def conv(s):
            # ∫ f1(y) f2(s - y) dy with y = c1 x
            a, b = sorted((c1 * lo, c1 * hi))
            val, _ = integrate.quad(
                lambda y: law.pdf(y / c1) / abs(c1) * law.pdf((s - y) / c2) / abs(c2),
                a,
                b,
                epsabs=1e-12,
                epsrel=1e-11,
                limit=400,
                points=[p for p in pts + [s - c2 * b for b in law.breakpoints] if a < p < b] or None,
            )
            return val

        vconv = np.vectorize(conv, otypes=[float])
        return lambda s: vconv(np.asarray(s, dtype=float))
    lo, hi = law.quad_limits()
    return _grid_density(law.pdf, lo, hi, coefs)


def _autocorr(law_name: str) -> Callable:
    """``a(s) = ∫ f(y + s) f(y) dy``, the density of ``X_1 - X_2``."""
    return lincomb_density(law_name, (1.0, -1.0))


# --- the model --------------------------------------------------------------


@dataclass(frozen=True)
class SampleModel:
    """Base law, the function ``g`` and the dimensions.

    ``g_kind`` is one of ``sum``, ``linear``, ``difference`` or ``distance``;
    ``coefs`` holds the linear coefficients for the first three (the sum is
    all ones and the difference is ``(1, -1)``).
    """

    law: BaseLaw
    g_kind: str
    m: int
    sample_dim: int = 1
    coefs: tuple[float, ...] | None = None
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.m < 2:
            raise ModelSpecError(f"m must be at least 2, got {self.m}")
        if self.sample_dim < 1:
            raise ModelSpecError("sample_dim must be positive")
        if self.g_kind in ("difference", "distance") and self.m != 2:
            raise ModelSpecError(f"{self.g_kind} models have m = 2")
        if self.coefs is not None and len(self.coefs) != self.m:
            raise ModelSpecError("need one coefficient per argument")
        if self.g_kind not in ("sum", "linear", "difference", "distance"):
            raise ModelSpecError(f"unknown g {self.g_kind!r}")

    @property
    def name(self) -> str:
        return self.label or describe_model(self)

    @property
    def linear(self) -> bool:
        return self.g_kind != "distance"

    @property
    def out_dim(self) -> int:
        return 1 if self.g_kind == "distance" else self.sample_dim

    @property
    def symmetric(self) -> bool:
        if self.g_kind == "distance":
            return True
        return len(set(self.coefs)) == 1

    @property
    def analytic(self) -> bool:
        return not self.law.discrete

    def g(self, *args):
        """Evaluate ``g`` on ``m`` broadcastable arrays of observations."""
        if len(args) != self.m:
            raise ValueError(f"g takes {self.m} arguments, got {len(args)}")
        if self.g_kind == "distance":
            diff = np.asarray(args[0], dtype=float) - np.asarray(args[1], dtype=float)
            if self.sample_dim == 1:
                return np.abs(diff)
            return np.sqrt(np.sum(diff * diff, axis=-1))
        out = self.coefs[0] * np.asarray(args[0], dtype=float)
        for c, a in zip(self.coefs[1:], args[1:]):
            out = out + c * np.asarray(a, dtype=float)
        return out

    # --- analytic pieces -----------------------------------------------------

    def _require_density(self):
        if self.law.discrete:
            raise UnsupportedModel(f"{self.name}: discrete base law has no densities")

    def _lin_density(self, coefs):
        dens = lincomb_density(self.law.name, tuple(coefs))
        if self.sample_dim == 1:
            return dens

        def prod_dens(s):
            s = np.asarray(s, dtype=float)
            return np.prod(dens(s), axis=-1)

        return prod_dens

    def partial_density(self, t, fixed: dict[int, np.ndarray]):
        """Density at ``t`` of ``g`` with the positions in ``fixed`` held at the given values.

        Linear models only, with at least one free position.
        """
        self._require_density()
        if not self.linear:
            raise UnsupportedModel("partial densities are implemented for linear g only")
        free = [c for i, c in enumerate(self.coefs) if i not in fixed]
        if not free:
            raise UnsupportedModel("no free argument left")
        shift = 0.0
        for i, x in fixed.items():
            shift = shift + self.coefs[i] * np.asarray(x, dtype=float)
        return self._lin_density(free)(np.asarray(t, dtype=float) - shift)

    def fbar(self, t, x):
        """``sum_i fbar_i(t, x)``, vectorized over ``x`` (and ``t`` for linear models)."""
        self._require_density()
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.linear:
            out = 0.0
            for i in range(self.m):
                out = out + self.partial_density(t, {i: x})
            return out
        f = self.law.pdf
        if self.sample_dim == 1:
            tt = np.maximum(t, 0.0)
            val = 2.0 * (f(x + tt) + f(x - tt))
            return np.where(t >= 0.0, val, 0.0)
        if self.sample_dim == 2:
            return _fbar_planar_distance(self.law, float(t), x)
        raise UnsupportedModel("distance fbar is implemented for sample_dim 1 and 2")

    def fg(self, t):
        """Density of ``g(X_1..X_m)`` at ``t``."""
        self._require_density()
        t = np.asarray(t, dtype=float)
        if self.linear:
            return self._lin_density(self.coefs)(t)
        a = _autocorr(self.law.name)
        if self.sample_dim == 1:
            tt = np.maximum(t, 0.0)
            return np.where(t >= 0.0, 2.0 * a(tt), 0.0)
        if self.sample_dim == 2:
            return _fg_planar_distance(self.law.name, t)
        raise UnsupportedModel("distance fg is implemented for sample_dim 1 and 2")

    def fg_breakpoints(self) -> tuple[float, ...]:
        """Points where ``fg`` may fail to be smooth (hints for quadrature)."""
        if self.g_kind == "distance":
            return (0.0,)
        if not self.law.breakpoints or self.sample_dim != 1:
            return ()
        pts = set()
        for combo in itertools.product(self.law.breakpoints, repeat=self.m):
            pts.add(float(sum(c * b for c, b in zip(self.coefs, combo))))
        return tuple(sorted(pts))

    def base_pdf(self, x):
        """Joint density of one observation (product over coordinates)."""
        self._require_density()
        x = np.asarray(x, dtype=float)
        if self.sample_dim == 1:
            return self.law.pdf(x)
        return np.prod(self.law.pdf(x), axis=-1)


def _circle_crossings(breakpoints, t, x1, x2):
    """Angles at which the circle of radius t about (x1, x2) meets a breakpoint line."""
    out = []
    for b in breakpoints:
        c = (b - x1) / t
        if abs(c) <= 1.0:
            a = math.acos(c)
            out += [a, 2.0 * math.pi - a]
        s = (b - x2) / t
        if abs(s) <= 1.0:
            a = math.asin(s)
            out += [a % (2.0 * math.pi), math.pi - a]
    out = sorted({p for p in out if 0.0 < p < 2.0 * math.pi})
    return out or None


def _fbar_planar_distance(law: BaseLaw, t: float, x):
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if t <= 0:
        out = np.zeros(x.shape[0])
        return out[0] if single else out
    f = law.pdf
    out = np.empty(x.shape[0])
    for k, (x1, x2) in enumerate(x):
        val, _ = integrate.quad(
            lambda th: float(f(x1 + t * math.cos(th)) * f(x2 + t * math.sin(th))),
            0.0,
            2.0 * math.pi,
            epsabs=1e-11,
            limit=400,
            points=_circle_crossings(law.breakpoints, t, x1, x2),
        )
        out[k] = 2.0 * t * val
    return out[0] if single else out


def _square_distance_density(t):
    """Density of the distance between two uniform points in the unit square."""
    t = np.asarray(t, dtype=float)
    inner = 2.0 * t * (math.pi - 4.0 * t + t * t)
    tc = np.clip(t, 1.0, math.sqrt(2.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        outer = 2.0 * tc * (
            4.0 * np.sqrt(tc * tc - 1.0) - (tc * tc + 2.0 - math.pi) - 4.0 * np.arccos(1.0 / tc)
        )
    out = np.where(t <= 1.0, inner, outer)
    return np.where((t >= 0.0) & (t <= math.sqrt(2.0)), out, 0.0)


def _fg_planar_distance(law_name: str, t):
    if law_name == "normal01":
        # X1 - X2 ~ N(0, 2 I): Rayleigh with scale sqrt(2)
        return np.where(t >= 0, 0.5 * t * np.exp(-0.25 * t * t), 0.0)
    if law_name == "uniform01":
        return _square_distance_density(t)
    a = _autocorr(law_name)

    def one(tt):
        if tt <= 0:
            return 0.0
        val, _ = integrate.quad(
            lambda th: float(a(tt * math.cos(th)) * a(tt * math.sin(th))), 0.0, 2 * math.pi, limit=200
        )
        return tt * val

    return np.vectorize(one, otypes=[float])(t)


# --- construction from spec strings ------------------------------------------

_LINEAR_RE = re.compile(r"^linear\(([^)]*)\)$")


def make_model(law: str | BaseLaw, g: str, m: int = 2, sample_dim: int = 1, coefs=None) -> SampleModel:
    law = get_law(law) if isinstance(law, str) else law
    if g == "sum":
        coefs = (1.0,) * m
    elif g == "difference":
        m, coefs = 2, (1.0, -1.0)
    elif g == "distance":
        m, coefs = 2, None
    elif g == "linear":
        coefs = tuple(float(c) for c in coefs)
        m = len(coefs)
    else:
        raise ModelSpecError(f"unknown g {g!r}")
    return SampleModel(law, g, m, sample_dim, coefs)


def parse_model(spec: str) -> SampleModel:
    """Parse ``"<law>:<g>[:m=<int>][:dim=<int>]"``.

    ``<g>`` is ``sum``, ``difference``, ``distance`` or ``linear(c1,..,cm)``.
    Examples: ``normal01:sum:m=2``, ``uniform01:distance``,
    ``discrete(0,1;0.5,0.5):sum:m=2``, ``normal01:linear(1,-2)``.
    """
    # split on ':' outside parentheses
    parts, depth, cur = [], 0, ""
    for ch in spec.strip():
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == ":" and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    if len(parts) < 2:
        raise ModelSpecError(f"model spec {spec!r} must look like '<law>:<g>[:m=..][:dim=..]'")
    law = get_law(parts[0])
    g = parts[1].strip()
    opts = {}
    for p in parts[2:]:
        key, sep, val = p.partition("=")
        if not sep or key.strip() not in ("m", "dim"):
            raise ModelSpecError(f"bad model option {p!r} in {spec!r}")
        opts[key.strip()] = int(val)
    if g in ("difference", "distance") and opts.get("m", 2) != 2:
        raise ModelSpecError(f"{g} models have m = 2, got m={opts['m']}")
    m = opts.get("m", 2)
    dim = opts.get("dim", 1)
    lin = _LINEAR_RE.match(g)
    if lin:
        coefs = [float(v) for v in lin.group(1).split(",")]
        model = make_model(law, "linear", sample_dim=dim, coefs=coefs)
    else:
        model = make_model(law, g, m=m, sample_dim=dim)
    return SampleModel(model.law, model.g_kind, model.m, model.sample_dim, model.coefs, label=spec.strip())


def describe_model(model: SampleModel) -> str:
    g = model.g_kind
    if g == "linear":
        g = "linear(" + ",".join(f"{c:g}" for c in model.coefs) + ")"
    out = f"{model.law.name}:{g}"
    if model.g_kind in ("sum", "linear"):
        out += f":m={model.m}"
    if model.sample_dim != 1:
        out += f":dim={model.sample_dim}"
    return out


# --- samples ----------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    points: np.ndarray
    seed: int
    replication: int = 0

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    def __len__(self):
        return self.n


def rng_for(seed: int, replication: int = 0) -> np.random.Generator:
    """Generator for replication ``replication`` under master seed ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replication)]))


def sample(model: SampleModel, n: int, seed: int, replication: int = 0) -> Sample:
    """Draw ``n`` i.i.d. observations; deterministic in ``(seed, replication)``."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    rng = rng_for(seed, replication)
    size = (n,) if model.sample_dim == 1 else (n, model.sample_dim)
    pts = np.asarray(model.law.draw(rng, size), dtype=float)
    return Sample(pts, seed, replication)


def fbar(model: SampleModel, t, x):
    return model.fbar(t, x)


def fg(model: SampleModel, t):
    return model.fg(t)
