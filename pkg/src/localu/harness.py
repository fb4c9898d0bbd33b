"""Seeded Monte Carlo experiments for the local U-process.

Every replication ``r`` draws its sample from the stream
``SeedSequence([seed, r])``, so results do not depend on how replications
are scheduled across threads.  Aggregation always runs in replication order.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .estimator import _points, choose_method, n_ordered_tuples, surface_values
from .hoeffding import degenerate_term
from .kernels import Kernel, eval_scaled, get_kernel, kernel_norm, make_higher_order, tail_mass
from .models import SampleModel, parse_model, sample
from .theory import bias_prediction, bias_slope, kernel_mean, limit_variance

__all__ = [
    "BudgetExceeded",
    "ExperimentConfig",
    "ExperimentResult",
    "UniformResult",
    "DecayResult",
    "BiasResult",
    "kolmogorov_sf",
    "ks_normal",
    "vbar",
    "grid_norm",
    "run_clt",
    "run_uniform_bandwidth",
    "run_degenerate_decay",
    "run_bias_rate",
    "smoothing_gap_bound",
    "BenchRow",
    "run_bench",
]

DEFAULT_BUDGET = 5e9


class BudgetExceeded(RuntimeError):
    pass


# --- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  ``n`` is a single size or a ladder; ``h_n = c n^-gamma``."""

    model: str
    kernel: str = "gaussian"
    n: tuple[int, ...] = (500,)
    c: float = 1.0
    gamma: float = 1.0 / 3.0
    lambda_grid: tuple[float, ...] = (1.0,)
    t_grid: tuple[float, ...] = (0.0,)
    R: int = 100
    seed: int = 0
    p_norms: tuple[float, ...] = (1.0, 2.0, math.inf)
    kernel_order: int = 2
    method: str = "auto"
    budget: float = DEFAULT_BUDGET
    threads: int = 1

    def __post_init__(self):
        n = (self.n,) if isinstance(self.n, (int, np.integer)) else tuple(int(v) for v in self.n)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in np.atleast_1d(self.lambda_grid)))
        object.__setattr__(self, "t_grid", tuple(float(v) for v in np.atleast_1d(self.t_grid)))
        object.__setattr__(self, "p_norms", tuple(float(p) for p in self.p_norms))
        if not n:
            raise ValueError("n: empty ladder")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.R < 2:
            raise ValueError(f"R must be at least 2, got {self.R}")
        n0 = min(n)
        if n0 * self.h_n(n0) < 10:
            raise ValueError(f"n*h_n = {n0 * self.h_n(n0):.3g} < 10 at n = {n0}; window too narrow")
        lam = np.asarray(self.lambda_grid)
        if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
            raise ValueError("lambda_grid must be positive and strictly increasing")
        for p in self.p_norms:
            if p not in (1.0, 2.0, math.inf):
                raise ValueError(f"p_norms must be drawn from 1, 2, inf; got {p}")
        if self.threads < 1:
            raise ValueError("threads must be positive")

    def h_n(self, n: int) -> float:
        return self.c * float(n) ** (-self.gamma)

    def resolve(self) -> tuple[SampleModel, Kernel]:
        model = parse_model(self.model)
        K = get_kernel(self.kernel, model.out_dim)
        if self.kernel_order != 2:
            K = make_higher_order(K, self.kernel_order)
        return model, K


# --- statistics ------------------------------------------------------------------


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """``P(sup|B| > x)`` for a Brownian bridge: ``2 sum (-1)^(k-1) exp(-2 k^2 x^2)``."""
    if x <= 0:
        return 1.0
    if x < 0.2:
        # the alternating series converges slowly here and the answer is 1 to double precision
        return 1.0
    k = np.arange(1, terms + 1)
    val = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * x * x))
    return float(min(max(val, 0.0), 1.0))


def ks_normal(values, variance: float) -> tuple[float, float]:
    """KS statistic of ``values`` against ``N(0, variance)`` and its asymptotic p-value."""
    x = np.sort(np.asarray(values, dtype=float))
    R = x.size
    if variance <= 0:
        return float("nan"), float("nan")
    F = special.ndtr(x / math.sqrt(variance))
    i = np.arange(1, R + 1)
    D = float(max(np.max(i / R - F), np.max(F - (i - 1) / R)))
    return D, kolmogorov_sf(math.sqrt(R) * D)


def vbar(x, model: SampleModel, t_grid) -> np.ndarray:
    """``n^{-1/2} sum_i (fbar(t, X_i) - m f_g(t))`` on a grid."""
    x = np.asarray(x, dtype=float).reshape(-1)
    t = np.asarray(t_grid, dtype=float).reshape(-1)
    fb = model.fbar(t[:, None], x[None, :])
    return (np.sum(fb, axis=1) - x.size * model.m * model.fg(t)) / math.sqrt(x.size)


def grid_norm(values, t_grid, p: float) -> float:
    """Grid L_p norm; trapezoid weights for finite p, max for p = inf."""
    v = np.abs(np.asarray(values, dtype=float))
    if math.isinf(p):
        return float(np.max(v))
    t = np.asarray(t_grid, dtype=float).reshape(-1)
    if t.size == 1:
        return float(v[0])
    return float(integrate.trapezoid(v**p, t) ** (1.0 / p))


def _map_reps(fn, R: int, threads: int) -> list:
    if threads <= 1:
        return [fn(r) for r in range(R)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map returns in submission order, i.e. sorted by replication index
        return list(pool.map(fn, range(R)))


def _guard(model, K, t_grid, lambda_grid, n: int, R: int, method: str, budget: float) -> str:
    used = choose_method(model, K, t_grid, n, method)
    if used == "naive":
        cost = R * n_ordered_tuples(n, model.m) * len(t_grid) * len(lambda_grid)
        if cost > budget:
            raise BudgetExceeded(
                f"naive evaluation needs {cost:.3g} kernel evaluations, over the budget of {budget:.3g}"
            )
    return used


# --- pointwise and uniform CLT --------------------------------------------------


@dataclass
class ExperimentResult:
    n: int
    h_n: float
    t_grid: np.ndarray
    lambda_grid: np.ndarray
    method: str
    mean: np.ndarray  # (nt, nl)
    var: np.ndarray  # (nt, nl)
    theory_var: np.ndarray  # (nt,)
    ks_stat: np.ndarray  # (nt, nl)
    ks_pvalue: np.ndarray  # (nt, nl)
    discrepancy: np.ndarray  # (R,) D_n per replication
    lp: dict[float, np.ndarray]  # p -> (R,) sup over lambda of the grid L_p discrepancy
    runtime: float
    u: np.ndarray = field(repr=False)  # (R, nt, nl)
    vbar: np.ndarray = field(repr=False)  # (R, nt)

    @property
    def R(self) -> int:
        return self.u.shape[0]

    def centered_ok(self, z: float = 3.0) -> np.ndarray:
        """``|mean| <= z sd / sqrt(R)`` for every ``(t, lambda)``."""
        return np.abs(self.mean) <= z * np.sqrt(self.var) / math.sqrt(self.R)


def run_clt(config: ExperimentConfig, n: int | None = None) -> ExperimentResult:
    """Replicate ``u_{n,lambda}(t)`` and ``vbar_n(t)`` and summarize."""
    start = time.perf_counter()
    model, K = config.resolve()
    model._require_density()
    n = int(config.n[0] if n is None else n)
    h_n = config.h_n(n)
    t_grid = np.asarray(config.t_grid)
    lam = np.asarray(config.lambda_grid)
    method = _guard(model, K, config.t_grid, config.lambda_grid, n, config.R, config.method, config.budget)
    means = np.array([[kernel_mean(model, K, l * h_n, t) for l in lam] for t in t_grid])

    def one(r):
        x = _points(sample(model, n, config.seed, r))
        vals, _ = surface_values(x, model, K, t_grid, lam, h_n, method)
        return math.sqrt(n) * (vals - means), vbar(x, model, t_grid)

    reps = _map_reps(one, config.R, config.threads)
    u = np.stack([a for a, _ in reps])
    vb = np.stack([b for _, b in reps])
    gap = u - vb[:, :, None]
    disc = np.max(np.abs(gap), axis=(1, 2))
    lp = {
        p: np.array([max(grid_norm(gap[r, :, j], t_grid, p) for j in range(lam.size)) for r in range(config.R)])
        for p in config.p_norms
    }
    theory = np.array([limit_variance(model, t) for t in t_grid])
    ks = np.empty(u.shape[1:])
    pv = np.empty(u.shape[1:])
    for i in range(t_grid.size):
        for j in range(lam.size):
            ks[i, j], pv[i, j] = ks_normal(u[:, i, j], theory[i])
    return ExperimentResult(
        n=n,
        h_n=h_n,
        t_grid=t_grid,
        lambda_grid=lam,
        method=method,
        mean=u.mean(axis=0),
        var=u.var(axis=0, ddof=1),
        theory_var=theory,
        ks_stat=ks,
        ks_pvalue=pv,
        discrepancy=disc,
        lp=lp,
        runtime=time.perf_counter() - start,
        u=u,
        vbar=vb,
    )


@dataclass
class UniformResult:
    ns: np.ndarray
    h_ns: np.ndarray
    median_discrepancy: np.ndarray
    median_lp: dict[float, np.ndarray]
    results: list[ExperimentResult] = field(repr=False)

    def ratio(self) -> float:
        """Median ``D_n`` at the largest ``n`` over that at the smallest."""
        return float(self.median_discrepancy[-1] / self.median_discrepancy[0])


def run_uniform_bandwidth(config: ExperimentConfig) -> UniformResult:
    """Median over replications of ``D_n`` along the n ladder."""
    results = [run_clt(config, n) for n in config.n]
    return UniformResult(
        ns=np.array(config.n),
        h_ns=np.array([r.h_n for r in results]),
        median_discrepancy=np.array([np.median(r.discrepancy) for r in results]),
        median_lp={p: np.array([np.median(r.lp[p]) for r in results]) for p in config.p_norms},
        results=results,
    )


# --- degenerate term ---------------------------------------------------------------


@dataclass
class DecayResult:
    ns: np.ndarray
    h_ns: np.ndarray
    mean_max: np.ndarray  # Monte Carlo mean of max_t |sqrt(n) U^(2)(pi_2 Kbar)|
    median_max: np.ndarray
    slope: float
    predicted_slope: float
    runtime: float


def run_degenerate_decay(config: ExperimentConfig) -> DecayResult:
    """Decay in ``n`` of ``E max_t |sqrt(n) U_n^{(2)}(pi_2 Kbar_{h_n})(t)|`` at ``lambda = 1``."""
    start = time.perf_counter()
    model, K = config.resolve()
    if model.m != 2:
        raise ValueError("the degenerate term experiment needs an m = 2 model")
    t_grid = np.asarray(config.t_grid)
    means, medians = [], []
    for n in config.n:
        h = config.h_n(n)
        method = _guard(model, K, config.t_grid, (1.0,), n, config.R, config.method, config.budget)

        def one(r, n=n, h=h, method=method):
            x = _points(sample(model, n, config.seed, r))
            vals, _ = surface_values(x, model, K, t_grid, [1.0], h, method)
            return float(np.max(np.abs(degenerate_term(x, model, K, h, t_grid, vals[:, 0]))))

        stats = np.array(_map_reps(one, config.R, config.threads))
        means.append(stats.mean())
        medians.append(np.median(stats))
    ns = np.array(config.n, dtype=float)
    means = np.array(means)
    slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
    return DecayResult(
        ns=np.array(config.n),
        h_ns=np.array([config.h_n(n) for n in config.n]),
        mean_max=means,
        median_max=np.array(medians),
        slope=slope,
        # C / sqrt(n h_n) with h_n = c n^-gamma decays like n^(gamma/2 - 1/2)
        predicted_slope=-0.5 + config.gamma / 2.0,
        runtime=time.perf_counter() - start,
    )


# --- bias ------------------------------------------------------------------------------


@dataclass
class BiasResult:
    hs: np.ndarray
    biases: np.ndarray
    slope: float
    order: int
    # stochastic check along the n ladder: n, h_n, sqrt(n)*(mean U - f_g), sqrt(n)*predicted bias
    ladder: list[tuple[int, float, float, float]] = field(default_factory=list)


def run_bias_rate(config: ExperimentConfig, hs=None, t: float | None = None, stochastic: bool = True) -> BiasResult:
    """Slope of ``log|bias|`` in ``log h`` and, optionally, ``sqrt(n) * bias`` along the ladder."""
    model, K = config.resolve()
    t = config.t_grid[0] if t is None else t
    hs = np.geomspace(0.05, 0.2, 6) if hs is None else np.asarray(hs, dtype=float)
    slope, biases = bias_slope(model, K, t, hs)
    out = BiasResult(hs, biases, slope, K.order)
    if not stochastic:
        return out
    f0 = float(model.fg(t))

    for n in config.n:
        h = config.h_n(n)
        method = _guard(model, K, [t], (1.0,), n, config.R, config.method, config.budget)

        def one(r, n=n, h=h, method=method):
            x = _points(sample(model, n, config.seed, r))
            vals, _ = surface_values(x, model, K, [t], [1.0], h, method)
            return float(vals[0, 0])

        est = np.array(_map_reps(one, config.R, config.threads))
        out.ladder.append(
            (int(n), h, math.sqrt(n) * (est.mean() - f0), math.sqrt(n) * bias_prediction(model, K, t, h))
        )
    return out


# --- smoothing bound -------------------------------------------------------------------


def smoothing_gap_bound(x, model: SampleModel, K: Kernel, h: float, t_grid, delta: float, span: float = 12.0):
    """Smoothing gap ``max_t |(vbar_n * K_h)(t) - vbar_n(t)|`` and its bound.

    The bound is ``w_delta(vbar_n) ||K||_1 + 2 ||vbar_n||_inf * (mass of |K|
    outside radius delta / h^{1/d})``; the modulus and the sup norm are taken
    on fine grids.  Returns ``(gap, bound)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    shifts = np.linspace(-delta, delta, 401)
    wide = np.linspace(t_grid.min() - span, t_grid.max() + span, 4001)
    vb_wide = vbar(x, model, wide)
    modulus = 0.0
    for t in t_grid:
        diffs = vbar(x, model, t - shifts) - vbar(x, model, [t])[0]
        modulus = max(modulus, float(np.max(np.abs(diffs))))
    sup = float(np.max(np.abs(vb_wide)))
    bound = modulus * kernel_norm(K, 1.0) + 2.0 * sup * tail_mass(K, delta / h ** (1.0 / K.d))
    R = K.radius * h
    gap = 0.0
    for t in t_grid:
        v0 = vbar(x, model, [t])[0]
        val, _ = integrate.quad(
            lambda u: (vbar(x, model, [t - u])[0] - v0) * float(eval_scaled(K, h, u)),
            -R,
            R,
            epsabs=1e-12,
            limit=400,
        )
        gap = max(gap, abs(val))
    return gap, bound


# --- benchmark ---------------------------------------------------------------------------

FAST_MIN_N = 100


@dataclass
class BenchRow:
    n: int
    t_naive: float
    t_fast: float
    max_abs_diff: float
    method: str
    skipped: bool = False
    tolerance: float = 1e-3

    @property
    def ok(self) -> bool:
        return self.skipped or self.max_abs_diff <= self.tolerance


def run_bench(config: ExperimentConfig, repeats: int = 3, tolerance: float = 1e-3) -> list[BenchRow]:
    """Time the naive and fast paths on one sample per ``n`` (best of ``repeats``)."""
    model, K = config.resolve()
    t_grid = np.asarray(config.t_grid)
    lam = np.asarray(config.lambda_grid)
    fast = choose_method(model, K, config.t_grid, max(config.n), "fast")
    rows = []
    for n in config.n:
        if n < FAST_MIN_N:
            rows.append(BenchRow(int(n), math.nan, math.nan, math.nan, fast, True, tolerance))
            continue
        _guard(model, K, config.t_grid, config.lambda_grid, n, repeats, "naive", config.budget)
        h = config.h_n(n)
        x = _points(sample(model, n, config.seed, 0))

        def best(method):
            times, vals = [], None
            for _ in range(repeats):
                t0 = time.perf_counter()
                vals, _ = surface_values(x, model, K, t_grid, lam, h, method)
                times.append(time.perf_counter() - t0)
            return min(times), vals

        tn, vn = best("naive")
        tf, vf = best(fast)
        rows.append(BenchRow(int(n), tn, tf, float(np.max(np.abs(vn - vf))), fast, False, tolerance))
    return rows
