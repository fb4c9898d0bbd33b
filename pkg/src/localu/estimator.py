"""Local U-statistic estimates of the density of ``g(X_1..X_m)``.

Three evaluation paths:

``u_naive``
    the exact O(n^m) sum over ordered tuples of distinct indices.  It is the
    oracle for everything else.
``u_fast_sum``
    linear ``g`` in one dimension.  Observations are linearly binned on a
    lattice, tuple sums become convolutions of the binned measures (FFT),
    and the diagonal terms are removed exactly by inclusion-exclusion over
    set partitions.  Exact up to binning.
``u_fast_distance``
    indicator kernels at ``t = 0`` for distance/difference ``g``: ordered
    pairs within a radius are counted after one sort (d = 1) or by spatial
    binning (d = 2, 3).  Bitwise identical to ``u_naive``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .kernels import Kernel, eval_scaled
from .models import Sample, SampleModel
from .theory import kernel_mean

__all__ = [
    "InsufficientSample",
    "FastPathUnsupported",
    "EstimateSurface",
    "u_naive",
    "u_naive_grid",
    "u_process",
    "u_fast_sum",
    "u_fast_distance",
    "count_pairs_within",
    "estimate_integral_f2",
    "estimate_surface",
    "surface_values",
    "choose_method",
    "n_ordered_tuples",
]

# chunk size (number of tuples) for the naive path
_CHUNK = 1 << 21


class InsufficientSample(ValueError):
    pass


class FastPathUnsupported(ValueError):
    pass


def _points(sample) -> np.ndarray:
    if isinstance(sample, Sample):
        return sample.points
    return np.asarray(sample, dtype=float)


def n_ordered_tuples(n: int, m: int) -> int:
    """``n! / (n - m)!``."""
    return math.perm(n, m)


def _check_dims(model: SampleModel, K: Kernel):
    if K.d != model.out_dim:
        raise ValueError(f"kernel dimension {K.d} does not match g dimension {model.out_dim}")


@functools.lru_cache(maxsize=32)
def _tuple_index(n: int, m: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n), m)), dtype=np.intp).reshape(-1, m)


def _g_chunks(x: np.ndarray, model: SampleModel):
    """Yield g over all ordered tuples of distinct indices, in chunks."""
    n, m = x.shape[0], model.m
    if m == 2:
        rows = max(1, _CHUNK // max(n, 1))
        idx = np.arange(n)
        for start in range(0, n, rows):
            stop = min(n, start + rows)
            a = x[start:stop, None]
            vals = model.g(a, x[None, :])
            # drop the diagonal i == j
            mask = idx[start:stop, None] != idx[None, :]
            yield vals[mask]
        return
    if n_ordered_tuples(n, m) <= 4 * _CHUNK:
        idx = _tuple_index(n, m)
        for start in range(0, idx.shape[0], _CHUNK):
            block = idx[start : start + _CHUNK]
            yield model.g(*(x[block[:, r]] for r in range(m)))
        return
    # large n, m >= 3: fix the first index and enumerate the rest
    rest = list(range(n))
    for i in range(n):
        others = np.array(rest[:i] + rest[i + 1 :], dtype=np.intp)
        sub = np.array(list(itertools.permutations(range(n - 1), m - 1)), dtype=np.intp)
        block = others[sub]
        yield model.g(np.broadcast_to(x[i], x[block[:, 0]].shape), *(x[block[:, r]] for r in range(m - 1)))


def _indicator_value(count: int, K: Kernel, lh: float, n_tuples: int) -> float:
    """U for an indicator kernel from an integer count of tuples inside the support."""
    height = float(np.max(K.func(np.zeros(K.d) if K.d > 1 else np.zeros(1))))
    return count * (height / lh) / n_tuples


def _kernel_arg(K: Kernel, lh: float, t, g):
    return (np.asarray(t, dtype=float) - g) / lh ** (1.0 / K.d)


def u_naive_grid(sample, model: SampleModel, K: Kernel, t_grid, lh: float) -> np.ndarray:
    """``U_n(t)`` at every ``t`` in ``t_grid`` by direct enumeration.

    Indicator kernels are accumulated as integer counts so that the result
    is reproducible bit for bit by :func:`u_fast_distance`.
    """
    _check_dims(model, K)
    if not lh > 0:
        raise ValueError(f"bandwidth must be positive, got {lh}")
    x = _points(sample)
    n, m = x.shape[0], model.m
    if n < m:
        raise InsufficientSample(f"need at least m = {m} observations, got {n}")
    t_grid = np.asarray(t_grid, dtype=float)
    if K.d == 1:
        t_grid = t_grid.reshape(-1)
    else:
        t_grid = t_grid.reshape(-1, K.d)
    N = n_ordered_tuples(n, m)
    if K.indicator:
        counts = np.zeros(t_grid.shape[0], dtype=np.int64)
        for g in _g_chunks(x, model):
            for k, t in enumerate(t_grid):
                counts[k] += np.count_nonzero(K.func(_kernel_arg(K, lh, t, g)))
        return np.array([_indicator_value(int(c), K, lh, N) for c in counts])
    sums = np.zeros(t_grid.shape[0])
    for g in _g_chunks(x, model):
        for k, t in enumerate(t_grid):
            sums[k] += np.sum(eval_scaled(K, lh, t - g))
    return sums / N


def u_naive(sample, model: SampleModel, K: Kernel, t, lh: float) -> float:
    """Local U-statistic ``U_n(t)`` with bandwidth ``lh = lambda * h_n``."""
    t = np.asarray(t, dtype=float)
    return float(u_naive_grid(sample, model, K, t.reshape(1, -1) if K.d > 1 else t.reshape(1), lh)[0])


def u_process(sample, model: SampleModel, K: Kernel, t, lam: float, h_n: float, mean: float | None = None) -> float:
    """``sqrt(n) (U_n(t, lam) - E K_{lam h_n}(t - g))``, centered with the exact mean."""
    x = _points(sample)
    lh = lam * h_n
    if mean is None:
        mean = kernel_mean(model, K, lh, t)
    return math.sqrt(x.shape[0]) * (u_naive(x, model, K, t, lh) - mean)


# --- FFT path for linear g ---------------------------------------------------


def _set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]


def _mobius(partition) -> int:
    out = 1
    for block in partition:
        b = len(block)
        out *= (-1) ** (b - 1) * math.factorial(b - 1)
    return out


def _uniform_step(t_grid, delta_max):
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if t_grid.size == 1:
        return t_grid, delta_max, 1
    diffs = np.diff(t_grid)
    sp = diffs[0]
    if sp <= 0 or np.max(np.abs(diffs - sp)) > 1e-9 * max(abs(sp), 1.0):
        raise ValueError("u_fast_sum needs a uniform, increasing t grid")
    sub = max(1, int(math.ceil(sp / delta_max - 1e-9)))
    return t_grid, sp / sub, sub


def u_fast_sum(sample, model: SampleModel, K: Kernel, t_grid, h: float, delta: float = 1e-3) -> np.ndarray:
    """``U_n`` on a uniform t grid for linear ``g`` in one dimension.

    The lattice step is the largest value ``<= delta`` dividing the grid
    spacing.  Accuracy is limited only by linear binning, an O(step^2)
    effect for smooth kernels.
    """
    if not model.linear or model.sample_dim != 1 or K.d != 1:
        raise FastPathUnsupported("u_fast_sum handles linear g with one-dimensional observations")
    x = _points(sample).reshape(-1)
    n, m = x.size, model.m
    if n < m:
        raise InsufficientSample(f"need at least m = {m} observations, got {n}")
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    t_grid, step, sub = _uniform_step(t_grid, delta)
    t0 = float(t_grid[0])
    coefs = model.coefs

    # lattice origins; the total origin must sit on the t lattice
    ys = [c * x for c in coefs]
    origins = [0.0] * m
    for r in range(1, m):
        origins[r] = math.floor(ys[r].min() / step) * step
    rest = sum(origins[1:])
    k0 = math.ceil((t0 - rest - ys[0].min()) / step)
    origins[0] = t0 - rest - k0 * step
    # total origin S0 = t0 - k0 * step

    idx, frac = [], []
    for r in range(m):
        pos = (ys[r] - origins[r]) / step
        j = np.floor(pos).astype(np.int64)
        f = pos - j
        # guard against rounding just below an integer
        j = np.maximum(j, 0)
        idx.append(j)
        frac.append(np.clip(f, 0.0, 1.0))

    def block_measure(block):
        # sum over points of the convolution of that point's binned masses
        # at the positions in `block`
        base = np.zeros(n, dtype=np.int64)
        coef = np.ones((n, 1))
        for r in block:
            base += idx[r]
            lo = coef * (1.0 - frac[r])[:, None]
            hi = coef * frac[r][:, None]
            coef = np.concatenate([lo, np.zeros((n, 1))], axis=1)
            coef[:, 1:] += hi
        out = np.zeros(int(base.max()) + len(block) + 1)
        for k in range(len(block) + 1):
            np.add.at(out, base + k, coef[:, k])
        return out

    blocks = {}
    total = None
    for part in _set_partitions(range(m)):
        mu = _mobius(part)
        meas = None
        for block in part:
            key = tuple(block)
            if key not in blocks:
                blocks[key] = block_measure(block)
            b = blocks[key]
            meas = b if meas is None else signal.fftconvolve(meas, b)
        meas = mu * meas
        if total is None:
            total = meas
        else:
            size = max(total.size, meas.size)
            total = np.pad(total, (0, size - total.size)) + np.pad(meas, (0, size - meas.size))

    J = int(math.ceil(K.radius * h / step)) + 1
    kv = eval_scaled(K, h, step * np.arange(-J, J + 1))
    conv = signal.fftconvolve(total, kv)
    # grid point i (lattice index i * sub) sits at conv index i*sub + k0 + J
    want = np.arange(t_grid.size) * sub + k0 + J
    out = np.zeros(t_grid.size)
    ok = (want >= 0) & (want < conv.size)
    out[ok] = conv[want[ok]]
    return out / n_ordered_tuples(n, m)


# --- pair counting for indicator kernels -------------------------------------


def _count_sorted(xs: np.ndarray, radius: float) -> int:
    """Ordered pairs ``i != j`` with ``|x_i - x_j| <= radius`` (xs sorted).

    The predicate is evaluated on the floating difference itself, which is
    monotone in ``x_j``; searchsorted gives a first guess that is then
    corrected at the boundary.
    """
    n = xs.size
    j = np.searchsorted(xs, xs + radius, side="right") - 1
    i = np.arange(n)
    while True:
        over = (j > i) & (xs[j] - xs > radius)
        if not over.any():
            break
        j[over] -= 1
    while True:
        nxt = np.minimum(j + 1, n - 1)
        under = (j + 1 < n) & (xs[nxt] - xs <= radius)
        if not under.any():
            break
        j[under] += 1
    return int(2 * np.sum(np.maximum(j - i, 0)))


def _count_binned(x: np.ndarray, K: Kernel, model: SampleModel, lh: float, t) -> int:
    """Ordered pairs inside the kernel support via a uniform cell grid."""
    n, d = x.shape
    scale = lh ** (1.0 / K.d)
    radius = K.support_radius * scale
    cell = radius * (1.0 + 1e-9) if radius > 0 else 1.0
    keys = np.floor((x - x.min(axis=0)) / cell).astype(np.int64)
    order = np.lexsort(keys.T[::-1])
    keys, xs = keys[order], x[order]
    uniq, start, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    lookup = {tuple(k): (s, c) for k, s, c in zip(uniq, start, counts)}
    offsets = list(itertools.product((-1, 0, 1), repeat=d))
    total = 0
    for key, (s, c) in lookup.items():
        a = xs[s : s + c]
        for off in offsets:
            nb = tuple(k + o for k, o in zip(key, off))
            hit = lookup.get(nb)
            if hit is None:
                continue
            b = xs[hit[0] : hit[0] + hit[1]]
            g = model.g(a[:, None, :], b[None, :, :])
            inside = K.func(_kernel_arg(K, lh, t, g)) != 0
            if nb == key:
                np.fill_diagonal(inside, False)
            total += int(np.count_nonzero(inside))
    return total


def count_pairs_within(sample, model: SampleModel, K: Kernel, lh: float, t=0.0) -> int:
    """Number of ordered pairs ``(i, j)``, ``i != j``, with ``K_lh(t - g(X_i, X_j)) != 0``."""
    if not K.indicator:
        raise FastPathUnsupported("pair counting needs an indicator kernel")
    if model.g_kind not in ("distance", "difference"):
        raise FastPathUnsupported("pair counting needs a distance or difference model")
    if np.any(np.asarray(t) != 0):
        raise FastPathUnsupported("pair counting is implemented at t = 0")
    _check_dims(model, K)
    x = _points(sample)
    if x.ndim == 1 or (x.ndim == 2 and x.shape[1] == 1 and model.sample_dim == 1):
        if not K.radial:
            raise FastPathUnsupported("one-dimensional pair counting needs a symmetric kernel")
        # K(u) != 0 iff |u| <= R; with u = -g / lh and R in {1/2, 1} this is
        # exactly |g| <= R * lh in floating point
        return _count_sorted(np.sort(x.reshape(-1)), K.support_radius * lh)
    if x.shape[1] > 3:
        raise FastPathUnsupported("spatial binning is implemented for d <= 3")
    return _count_binned(x, K, model, lh, t)


def u_fast_distance(sample, model: SampleModel, K: Kernel, lh_grid, t=0.0) -> tuple[np.ndarray, np.ndarray]:
    """Pair counts and ``U_n(0)`` for each bandwidth in ``lh_grid``."""
    x = _points(sample)
    n = x.shape[0]
    if n < 2:
        raise InsufficientSample("need at least two observations")
    lh_grid = np.atleast_1d(np.asarray(lh_grid, dtype=float))
    if np.any(lh_grid <= 0):
        # counts at radius 0 are available from count_pairs_within
        raise ValueError("bandwidths must be positive")
    N = n_ordered_tuples(n, 2)
    if x.ndim == 1:
        xs = np.sort(x)
    counts = np.empty(lh_grid.size, dtype=np.int64)
    for k, lh in enumerate(lh_grid):
        if x.ndim == 1:
            if not K.indicator:
                raise FastPathUnsupported("pair counting needs an indicator kernel")
            counts[k] = _count_sorted(xs, K.support_radius * lh)
        else:
            counts[k] = count_pairs_within(x, model, K, lh, t)
    values = np.array([_indicator_value(int(c), K, lh, N) for c, lh in zip(counts, lh_grid)])
    return counts, values


# --- derived estimators ------------------------------------------------------


def estimate_integral_f2(sample, K: Kernel, h: float) -> float:
    """Estimate ``∫ f^2`` from the interpoint distances ``|X_i - X_j|``.

    The density of the distance at zero is ``2 ∫ f^2``.  A symmetric kernel
    centred at ``t = 0`` sees only the half of its mass lying on ``[0, inf)``,
    so ``U_n(0)`` estimates ``f_g(0) / 2``; the boundary estimate of ``f_g(0)``
    is therefore ``2 U_n(0)`` and the return value is half of it.  No
    reflection is applied.  Indicator kernels go through exact pair counts.
    """
    from .models import make_model

    x = _points(sample).reshape(-1)
    if x.size < 2:
        raise InsufficientSample("need at least two observations")
    model = make_model("normal01", "distance")  # only g is used
    if K.indicator and K.d == 1:
        u0 = float(u_fast_distance(x, model, K, [h])[1][0])
    else:
        u0 = u_naive(x, model, K, 0.0, h)
    fg0 = 2.0 * u0
    return fg0 / 2.0


# --- surfaces ---------------------------------------------------------------


@dataclass
class EstimateSurface:
    t_grid: np.ndarray
    lambda_grid: np.ndarray
    values: np.ndarray  # (len(t_grid), len(lambda_grid))
    centered: np.ndarray | None
    n: int
    h_n: float
    kernel: str
    model: str
    method: str = "naive"
    means: np.ndarray | None = field(default=None, repr=False)


def _fast_applicable(model: SampleModel, K: Kernel, t_grid) -> str | None:
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if K.indicator and model.g_kind in ("distance", "difference") and np.all(t_grid == 0):
        if model.sample_dim <= 3:
            return "count"
    if model.linear and model.sample_dim == 1 and K.d == 1 and not K.indicator:
        if t_grid.size == 1:
            return "fft"
        diffs = np.diff(t_grid)
        if np.all(diffs > 0) and np.max(np.abs(diffs - diffs[0])) <= 1e-9 * max(abs(diffs[0]), 1):
            return "fft"
    return None


def choose_method(model: SampleModel, K: Kernel, t_grid, n: int, method: str = "auto") -> str:
    """Resolve ``auto``/``fast`` to one of ``naive``, ``fft``, ``count`` (explicit names pass through)."""
    if method not in ("auto", "fast", "naive", "fft", "count"):
        raise ValueError(f"unknown method {method!r}")
    if method == "naive":
        return "naive"
    fast = _fast_applicable(model, K, t_grid)
    if method in ("fft", "count"):
        if fast != method:
            raise FastPathUnsupported(f"the {method} path does not apply here")
        return method
    if method == "fast":
        if fast is None:
            raise FastPathUnsupported("no fast path for this model/kernel/grid combination")
        return fast
    t_arr = np.asarray(t_grid, dtype=float)
    nt = t_arr.shape[0] if t_arr.ndim else 1
    # the FFT path only pays off for larger samples
    if fast == "fft" and n_ordered_tuples(n, model.m) * nt < 2_000_000:
        return "naive"
    return fast or "naive"


def surface_values(sample, model, K, t_grid, lambda_grid, h_n, method="auto", delta=1e-3):
    """Matrix of ``U_n(t, lambda)``; returns ``(values, method_used)``."""
    x = _points(sample)
    lambda_grid = np.asarray(lambda_grid, dtype=float).reshape(-1)
    t_arr = np.asarray(t_grid, dtype=float)
    nt = t_arr.shape[0] if t_arr.ndim else 1
    fast = choose_method(model, K, t_grid, x.shape[0], method)
    out = np.empty((nt, lambda_grid.size))
    if fast == "count":
        _, vals = u_fast_distance(x, model, K, lambda_grid * h_n)
        out[:] = vals[None, :]
        return out, "count"
    for j, lam in enumerate(lambda_grid):
        if fast == "fft":
            out[:, j] = u_fast_sum(x, model, K, t_arr, lam * h_n, delta=delta)
        else:
            out[:, j] = u_naive_grid(x, model, K, t_arr, lam * h_n)
    return out, fast


def estimate_surface(sample, model: SampleModel, K: Kernel, t_grid, lambda_grid, h_n: float, method="auto"):
    """``U_n(t, lambda)`` and, for models with a density, ``u_{n,lambda}(t)``."""
    x = _points(sample)
    t_arr = np.asarray(t_grid, dtype=float)
    lambda_grid = np.asarray(lambda_grid, dtype=float).reshape(-1)
    values, used = surface_values(x, model, K, t_arr, lambda_grid, h_n, method)
    centered = means = None
    if model.analytic:
        ts = t_arr.reshape(-1) if K.d == 1 else t_arr.reshape(-1, K.d)
        means = np.array([[kernel_mean(model, K, lam * h_n, t) for lam in lambda_grid] for t in ts])
        centered = math.sqrt(x.shape[0]) * (values - means)
    return EstimateSurface(
        t_arr, lambda_grid, values, centered, x.shape[0], h_n, K.name, model.name, used, means
    )
