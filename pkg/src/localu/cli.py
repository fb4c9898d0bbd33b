"""Command-line front end.

    localu <command> --config cfg.json --out outdir [--threads N] [--seed S] [--budget B]

Every run writes its CSV tables, ``summary.json`` (with a pass/fail entry per
criterion) and ``manifest.json`` (with sha256 checksums of the other files)
into ``--out``.  Exit status: 0 on success, 2 when a criterion fails, 1 on
errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .estimator import estimate_surface
from .hoeffding import verify_random_cases
from .models import sample
from .theory import density_power_integral, theorem7_sigma

log = logging.getLogger("localu")

COMMANDS = ("estimate", "hoeffding-verify", "clt-check", "uniform-check", "decay-check", "bias-rate", "sigma", "bench")

# config keys understood by at least one command
CONFIG_KEYS = {
    "model",
    "kernel",
    "n",
    "c",
    "gamma",
    "lambda_grid",
    "t_grid",
    "R",
    "seed",
    "p_norms",
    "kernel_order",
    "method",
    # command-specific
    "base",
    "dim",
    "cases",
    "hs",
    "repeats",
    "tolerance",
    "var_tol",
    "ks_alpha",
    "ratio_max",
    "slope_max",
    "naive_ratio_min",
    "fast_ratio_max",
}


class ConfigError(ValueError):
    pass


# --- config -------------------------------------------------------------------------


def _grid(value, field_name):
    """A grid is a list of numbers or ``{"start", "stop", "num"}``."""
    if isinstance(value, dict):
        try:
            return tuple(np.linspace(float(value["start"]), float(value["stop"]), int(value["num"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{field_name}: expected start/stop/num ({exc})") from None
    if isinstance(value, (int, float)):
        return (float(value),)
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{field_name}: expected a number, a list or start/stop/num") from None


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    return raw


def experiment_config(raw: dict, args) -> harness.ExperimentConfig:
    if "model" not in raw:
        raise ConfigError("model: required field missing")
    kw = {"model": str(raw["model"])}
    if "kernel" in raw:
        kw["kernel"] = str(raw["kernel"])
    if "n" in raw:
        n = raw["n"]
        try:
            kw["n"] = tuple(int(v) for v in (n if isinstance(n, list) else [n]))
        except (TypeError, ValueError):
            raise ConfigError("n: expected an integer or a list of integers") from None
    for key in ("c", "gamma"):
        if key in raw:
            kw[key] = float(raw[key])
    for key in ("lambda_grid", "t_grid"):
        if key in raw:
            kw[key] = _grid(raw[key], key)
    for key in ("R", "seed", "kernel_order"):
        if key in raw:
            kw[key] = int(raw[key])
    if "p_norms" in raw:
        kw["p_norms"] = tuple(math.inf if str(p).lower() in ("inf", "infinity") else float(p) for p in raw["p_norms"])
    if "method" in raw:
        kw["method"] = str(raw["method"])
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.budget is not None:
        kw["budget"] = args.budget
    kw["threads"] = args.threads
    try:
        cfg = harness.ExperimentConfig(**kw)
        cfg.resolve()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# --- output -----------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- commands ---------------------------------------------------------------------------
# Each returns (summary dict, criteria dict name -> bool, list of written files).


def cmd_estimate(raw, args, out: Path):
    cfg = experiment_config(raw, args)
    model, K = cfg.resolve()
    n = cfg.n[0]
    h_n = cfg.h_n(n)
    s = sample(model, n, cfg.seed)
    surf = estimate_surface(s, model, K, np.asarray(cfg.t_grid), cfg.lambda_grid, h_n, cfg.method)
    rows = []
    for i, t in enumerate(cfg.t_grid):
        for j, lam in enumerate(cfg.lambda_grid):
            cu = surf.centered[i, j] if surf.centered is not None else ""
            rows.append((t, lam, surf.values[i, j], cu, n, h_n))
    write_csv(out / "estimate.csv", ["t", "lambda", "U", "centered_u", "n", "h_n"], rows)
    return {"method": surf.method, "n": n, "h_n": h_n}, {}, ["estimate.csv"]


def cmd_hoeffding_verify(raw, args, out: Path):
    cases = int(raw.get("cases", 100))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    reports = verify_random_cases(cases, seed)
    write_csv(
        out / "hoeffding.csv",
        ["case_id", "model", "kernel", "n", "residual", "degeneracy"],
        [(r.case_id, r.model, r.kernel, r.n, r.residual, r.degeneracy) for r in reports],
    )
    worst_res = max(r.residual for r in reports)
    worst_deg = max(r.degeneracy for r in reports)
    criteria = {"residual_le_1e-10": worst_res <= 1e-10, "degeneracy_le_1e-12": worst_deg <= 1e-12}
    return {"cases": cases, "max_residual": worst_res, "max_degeneracy": worst_deg}, criteria, ["hoeffding.csv"]


def cmd_clt_check(raw, args, out: Path):
    cfg = experiment_config(raw, args)
    res = harness.run_clt(cfg)
    var_tol = float(raw.get("var_tol", 0.15))
    alpha = float(raw.get("ks_alpha", 0.01))
    rows = []
    for i, t in enumerate(res.t_grid):
        for j, lam in enumerate(res.lambda_grid):
            for name, val in (
                ("mean", res.mean[i, j]),
                ("var", res.var[i, j]),
                ("theory_var", res.theory_var[i]),
                ("ks_stat", res.ks_stat[i, j]),
                ("ks_pvalue", res.ks_pvalue[i, j]),
            ):
                rows.append((t, lam, name, val))
    write_csv(out / "clt.csv", ["t", "lambda", "statistic", "value"], rows)
    rel = np.abs(res.var / res.theory_var[:, None] - 1.0)
    criteria = {
        f"variance_within_{var_tol:g}": bool(np.all(rel <= var_tol)),
        f"ks_pvalue_gt_{alpha:g}": bool(np.all(res.ks_pvalue > alpha)),
        "centered": bool(np.all(res.centered_ok())),
    }
    summary = {
        "n": res.n,
        "h_n": res.h_n,
        "R": res.R,
        "method": res.method,
        "max_relative_variance_error": float(rel.max()),
        "min_ks_pvalue": float(res.ks_pvalue.min()),
        "median_discrepancy": float(np.median(res.discrepancy)),
        "runtime": res.runtime,
    }
    return summary, criteria, ["clt.csv"]


def cmd_uniform_check(raw, args, out: Path):
    cfg = experiment_config(raw, args)
    res = harness.run_uniform_bandwidth(cfg)
    ratio_max = float(raw.get("ratio_max", 0.5))
    ps = sorted(res.median_lp)
    header = ["n", "h_n", "median_D"] + [f"median_L{'inf' if math.isinf(p) else int(p)}" for p in ps]
    rows = [
        [n, h, d] + [res.median_lp[p][k] for p in ps]
        for k, (n, h, d) in enumerate(zip(res.ns, res.h_ns, res.median_discrepancy))
    ]
    write_csv(out / "uniform.csv", header, rows)
    criteria = {
        f"ratio_le_{ratio_max:g}": res.ratio() <= ratio_max,
        "decreasing": bool(np.all(np.diff(res.median_discrepancy) < 0)),
    }
    return {"ratio": res.ratio(), "methods": [r.method for r in res.results]}, criteria, ["uniform.csv"]


def cmd_decay_check(raw, args, out: Path):
    cfg = experiment_config(raw, args)
    res = harness.run_degenerate_decay(cfg)
    slope_max = float(raw.get("slope_max", -0.3))
    write_csv(
        out / "decay.csv",
        ["n", "h_n", "mean_max", "median_max"],
        zip(res.ns, res.h_ns, res.mean_max, res.median_max),
    )
    criteria = {
        f"slope_le_{slope_max:g}": res.slope <= slope_max,
        "medians_decreasing": bool(np.all(np.diff(res.median_max) < 0)),
    }
    summary = {"slope": res.slope, "rate_from_bound": res.predicted_slope, "runtime": res.runtime}
    return summary, criteria, ["decay.csv"]


def cmd_bias_rate(raw, args, out: Path):
    cfg = experiment_config(raw, args)
    hs = _grid(raw["hs"], "hs") if "hs" in raw else None
    res = harness.run_bias_rate(cfg, hs=hs)
    write_csv(out / "bias.csv", ["h", "bias"], zip(res.hs, res.biases))
    write_csv(out / "bias_ladder.csv", ["n", "h_n", "sqrt_n_bias_mc", "sqrt_n_bias_theory"], res.ladder)
    lo, hi = 0.95 * res.order, 1.05 * res.order
    criteria = {f"slope_in_[{lo:g},{hi:g}]": lo <= res.slope <= hi}
    return {"slope": res.slope, "order": res.order}, criteria, ["bias.csv", "bias_ladder.csv"]


def cmd_sigma(raw, args, out: Path):
    base = str(raw.get("base", "normal01"))
    dim = int(raw.get("dim", 1))
    try:
        i2 = density_power_integral(base, 2, dim)
        i3 = density_power_integral(base, 3, dim)
        s2 = theorem7_sigma(base, dim)
    except KeyError as exc:
        raise ConfigError(f"base: {exc}") from None
    write_csv(out / "sigma.csv", ["base", "sigma2", "int_f2", "int_f3"], [(base, s2, i2, i3)])
    return {"base": base, "sigma2": s2, "int_f2": i2, "int_f3": i3}, {}, ["sigma.csv"]


def cmd_bench(raw, args, out: Path):
    cfg = experiment_config(raw, args)
    rows = harness.run_bench(cfg, repeats=int(raw.get("repeats", 3)), tolerance=float(raw.get("tolerance", 1e-3)))
    write_csv(
        out / "bench.csv",
        ["n", "t_naive", "t_fast", "max_abs_diff", "status"],
        [
            (r.n, "", "", "", "skipped") if r.skipped else (r.n, r.t_naive, r.t_fast, r.max_abs_diff, r.method)
            for r in rows
        ],
    )
    criteria = {"max_abs_diff_within_tolerance": all(r.ok for r in rows)}
    done = [r for r in rows if not r.skipped]
    summary = {"method": rows[0].method if rows else None}
    if len(done) >= 2:
        naive_ratio = done[-1].t_naive / done[0].t_naive
        fast_ratio = done[-1].t_fast / done[0].t_fast
        summary.update(naive_ratio=naive_ratio, fast_ratio=fast_ratio)
        criteria["naive_ratio_ge"] = naive_ratio >= float(raw.get("naive_ratio_min", 3.5))
        criteria["fast_ratio_le"] = fast_ratio <= float(raw.get("fast_ratio_max", 2.5))
    return summary, criteria, ["bench.csv"]


_HANDLERS = {
    "estimate": cmd_estimate,
    "hoeffding-verify": cmd_hoeffding_verify,
    "clt-check": cmd_clt_check,
    "uniform-check": cmd_uniform_check,
    "decay-check": cmd_decay_check,
    "bias-rate": cmd_bias_rate,
    "sigma": cmd_sigma,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="localu", description="Local U-statistic density estimation and checks.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replications")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--budget", type=float, default=None, help="cap on naive kernel evaluations")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(command: str, config: str, out: str, args) -> int:
    start = time.perf_counter()
    raw = load_config(config)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary, criteria, files = _HANDLERS[command](raw, args, outdir)
    passed = all(criteria.values())
    summary = {"command": command, "criteria": criteria, "passed": passed, **summary}
    (outdir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    files = files + ["summary.json"]
    manifest = {
        "command": command,
        "config": str(Path(config).resolve()),
        "out": str(outdir.resolve()),
        "seed": args.seed if args.seed is not None else raw.get("seed", 0),
        "wall_clock": time.perf_counter() - start,
        "checksums": {f: _sha256(outdir / f) for f in files},
    }
    (outdir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    for name, ok in criteria.items():
        log.info("%s: %s", name, "pass" if ok else "FAIL")
    return 0 if passed else 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 1
    try:
        return run(args.command, args.config, args.out, args)
    except (ConfigError, ValueError, harness.BudgetExceeded, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
