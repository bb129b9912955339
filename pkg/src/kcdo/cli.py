"""Command line front end.

::

    kcdo {donut|fit|predict|bound-check|reconstruct} --config PATH
         [--data PATH] [--model PATH] [--out DIR] [--seed U64]

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .cdo import PairedData, fit, fit_grouped, mean_variance, normalize, predict_point, sample
from .config import ConfigError, RunConfig, jsonable, load_config
from .experiments import (
    DONUT_BOX,
    BoundSetup,
    DonutSpec,
    donut_reference,
    resolve_bandwidth,
    run_bound_check,
    run_donut,
    summarize_donut,
)
from .linalg import SingularSystemError, tikhonov_schedule
from .modelio import ModelFormatError, load_model, read_table, save_model, write_table
from .reconstruct import embed, normalize_reference, reconstruct_density, uniform_reference

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_DATA", "EXIT_NUMERIC"]

log = logging.getLogger("kcdo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("donut", "fit", "predict", "bound-check", "reconstruct")


class DataError(ValueError):
    pass


class NumericFailure(RuntimeError):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _alpha(value):
    return None if value == "schedule" else float(value)


def _strictly_decreasing(vals) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


def cmd_donut(cfg: RunConfig, out: Path) -> int:
    v = cfg.values
    slices = list(dict.fromkeys(v["slices"] + v["export_slices"]))
    for N in v["ladder"]:
        if N % v["n_means"]:
            raise ConfigError(f"ladder entry {N} is not a multiple of n_means={v['n_means']}")
    spec = DonutSpec(v["n_means"], v["ladder"][0] // v["n_means"], v["noise_std"],
                     v["rotation_deg"], tuple(slices))
    seeds = [v["seed"] + i for i in range(v["n_seeds"])]
    runs = run_donut(spec, v["ladder"], seeds, v["input_kernel"], v["output_kernel"],
                     v["input_bandwidth"], v["output_bandwidth"], (v["a"], v["b"], v["c_prime"]),
                     v["eval_side"], keep_estimates=True)
    cfg.resolved = {
        "donut": {k: val for k, val in spec.to_dict().items() if k != "samples_per_mean"},
        "seeds": seeds,
        "M": {str(N): donut_reference(N).M for N in v["ladder"]},
        "alpha": {str(r.N): r.alpha for r in runs},
    }
    rc = cfg.to_json()
    rows = [(r.N, r.M, r.seed, f"{x:g}", r.sigma_in, r.sigma_out, r.alpha, r.errors[x],
             r.errors_kernel_mass[x]) for r in runs for x in slices]
    write_table(out / "donut_errors.csv",
                ["N", "M", "seed", "slice", "sigma_in", "sigma_out", "alpha", "l1_error",
                 "l1_error_kernel_mass"], rows, rc)
    medians = summarize_donut(runs)
    medians_k = summarize_donut(runs, "errors_kernel_mass")
    trend = {f"{x:g}": _strictly_decreasing([medians[str(N)][f"{x:g}"] for N in v["ladder"]])
             for x in slices}
    _write_json(out / "donut_summary.json", {
        "run_config": cfg.to_dict(),
        "median_l1_error": medians,
        "median_l1_error_kernel_mass": medians_k,
        "strictly_decreasing": trend,
    })
    N_max = v["ladder"][-1]
    top = next(r for r in runs if r.N == N_max and r.seed == seeds[0])
    ref = donut_reference(N_max)
    evalref = uniform_reference(DONUT_BOX, v["eval_side"] ** 2, "grid")
    for x in v["export_slices"]:
        est = top.estimates[x]
        raw = est(ref.points)
        try:
            normed = normalize_reference(est, evalref)(ref.points)
        except ValueError:
            normed = np.full(ref.M, math.nan)
        truth = spec.conditional(x)(ref.points)
        write_table(out / f"donut_grid_x{x:g}.csv", ["y0", "y1", "raw", "normalized", "truth"],
                    zip(ref.points[:, 0], ref.points[:, 1], raw, normed, truth), rc)
    return EXIT_OK


def _auto_bounds(Y: np.ndarray) -> list[list[float]]:
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    pad = 0.1 * np.where(hi > lo, hi - lo, 1.0)
    return [[float(a), float(b)] for a, b in zip(lo - pad, hi + pad)]


def _auto_m(N: int, d: int) -> int:
    m = min(max(2, math.isqrt(N)), int(4096 ** (1.0 / d) + 1e-9))
    return m**d


def cmd_fit(cfg: RunConfig, data: Path, model_path: Path) -> int:
    v = cfg.values
    X, Y = read_table(data)
    d_out = Y.shape[1]
    bounds = _auto_bounds(Y) if v["bounds"] == "auto" else v["bounds"]
    if len(bounds) != d_out:
        raise ConfigError(f"bounds give {len(bounds)} dimensions, data has {d_out} outputs")
    M = _auto_m(X.shape[0], d_out) if v["m"] == "auto" else v["m"]
    try:
        ref = uniform_reference(bounds, M, v["mode"], v["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    k = resolve_bandwidth(v["input_kernel"], v["input_bandwidth"], X)
    l = resolve_bandwidth(v["output_kernel"], v["output_bandwidth"], Y)
    grouped_data = PairedData.with_groups(X, Y)
    use_grouped = v["grouped"] == "yes" or (v["grouped"] == "auto" and grouped_data.has_repeats)
    kw = dict(alpha=_alpha(v["alpha"]), alpha_out=_alpha(v["alpha_out"]),
              schedule=(v["a"], v["b"], v["c_prime"]))
    model = fit_grouped(grouped_data, ref, k, l, **kw) if use_grouped else \
        fit(PairedData(X, Y), ref, k, l, **kw)
    cfg.resolved = {"bounds": bounds, "M": ref.M, "input_kernel": k.to_dict(),
                    "output_kernel": l.to_dict(), "alpha": model.alpha,
                    "alpha_out": model.alpha_out, "grouped": use_grouped,
                    "n_distinct": int(grouped_data.inputs.shape[0]), "N": int(X.shape[0])}
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path, {"run_config": cfg.to_dict(),
                                   "train_target_mean": Y.mean(axis=0).tolist()})
    return EXIT_OK


def smae(pred: np.ndarray, target: np.ndarray, train_mean: np.ndarray) -> float:
    """Mean absolute error relative to the constant train-mean predictor."""
    base = np.mean(np.abs(target - train_mean))
    return float(np.mean(np.abs(pred - target)) / base) if base > 0 else math.nan


def cmd_predict(cfg: RunConfig, data: Path, model_path: Path, out: Path) -> int:
    v = cfg.values
    model, extra = load_model(model_path)
    Xq, Yq = read_table(data, require_y=False)
    d_in, d_out = model.input_kernel.dimension, model.output_kernel.dimension
    if Xq.shape[1] != d_in:
        raise DataError(f"query has {Xq.shape[1]} input columns, model expects {d_in}")
    if Yq is not None and Yq.shape[1] != d_out:
        raise DataError(f"query has {Yq.shape[1]} target columns, model predicts {d_out}")
    ycols = [f"y{c}" for c in range(d_out)]
    pred_rows, grid_rows, sample_rows, means = [], [], [], []
    Z = model.ref.points
    for q, x in enumerate(Xq):
        est = predict_point(model, x)
        raw = est(Z)
        try:
            normed = normalize(est)(Z)
            ok = 1
        except ValueError:
            log.warning("query %d: mass non-positive, normalized grid left as nan", q)
            normed, ok = np.full(Z.shape[0], math.nan), 0
        try:
            mom = mean_variance(est)
        except ValueError as exc:
            raise NumericFailure(f"query {q}: {exc}") from exc
        means.append(mom.mean)
        pred_rows.append([q, *x, *mom.mean, *mom.variance, int(mom.renormalized), ok])
        grid_rows.extend([q, *z, r, n] for z, r, n in zip(Z, raw, normed))
        if v["n_samples"]:
            S = sample(est, v["n_samples"], np.random.default_rng((v["seed"], q)))
            sample_rows.extend([q, i, *s] for i, s in enumerate(S))
    cfg.resolved = {"model_run_config": extra.get("run_config"), "n_query": int(Xq.shape[0])}
    rc = cfg.to_json()
    xcols = [f"x{c}" for c in range(d_in)]
    write_table(out / "predictions.csv",
                ["query", *xcols, *[f"mean_{c}" for c in ycols], *[f"var_{c}" for c in ycols],
                 "renormalized", "normalized_ok"], pred_rows, rc)
    write_table(out / "density_grid.csv", ["query", *ycols, "raw", "normalized"], grid_rows, rc)
    if v["n_samples"]:
        write_table(out / "samples.csv", ["query", "sample", *ycols], sample_rows, rc)
    summary = {"run_config": cfg.to_dict(), "n_query": int(Xq.shape[0])}
    if Yq is not None:
        summary["smae"] = smae(np.array(means), Yq, np.asarray(extra["train_target_mean"]))
    _write_json(out / "predict_summary.json", summary)
    return EXIT_OK


def cmd_bound_check(cfg: RunConfig, out: Path) -> int:
    v = cfg.values
    ladder = [(N, M) for N in v["ladder_n"] for M in v["ladder_m"]]
    setup = BoundSetup(v["sigma"], v["m0"], v["n_basis"])
    rows = run_bound_check(ladder, v["trials"], v["a"], v["b"], v["c_prime"],
                           _alpha(v["alpha"]), setup, v["seed"])
    cfg.resolved = {"ladder": ladder, "alpha": {f"{r['N']},{r['M']}": r["alpha"] for r in rows},
                    "mu_norm": rows[0]["mu_norm"]}
    cols = ["N", "M", "a", "b", "alpha", "c", "mu_norm", "epsilon", "probability", "trials",
            "coverage", "median_error", "median_mu_error", "passed"]
    write_table(out / "bound_check.csv", cols, ([r[c] for c in cols] for r in rows), cfg.to_json())
    passed = all(r["passed"] for r in rows)
    _write_json(out / "bound_check_summary.json",
                {"run_config": cfg.to_dict(), "rows": rows, "all_passed": passed})
    if not passed:
        raise NumericFailure("empirical coverage fell below the bound probability - 0.05")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, data: Path, out: Path) -> int:
    v = cfg.values
    X, _ = read_table(data, require_y=False)
    b = np.asarray(v["bounds"], dtype=float)
    if X.shape[1] != b.shape[0]:
        raise DataError(f"samples have {X.shape[1]} columns, bounds give {b.shape[0]} dimensions")
    outside = np.any((X < b[:, 0]) | (X > b[:, 1]), axis=1)
    n_clipped = int(outside.sum())
    if n_clipped:
        log.warning("%d of %d samples outside the bounds were clipped to the box",
                    n_clipped, X.shape[0])
        X = np.clip(X, b[:, 0], b[:, 1])
    family = v["kernel"]
    k = resolve_bandwidth(family, v["bandwidth"], X)
    try:
        ref = uniform_reference(v["bounds"], v["m"], v["mode"], v["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    N = X.shape[0]
    alpha = tikhonov_schedule(ref.M, N, v["a"], v["b"], v["c_prime"]) \
        if v["alpha"] == "schedule" else v["alpha"]
    est = reconstruct_density(embed(X, k), ref, alpha, v["method"])
    raw = est(ref.points)
    try:
        normed_est = normalize_reference(est, ref) if v["normalization"] == "reference" \
            else normalize(est)
        normed = normed_est(ref.points)
    except ValueError:
        log.warning("mass non-positive, normalized values left as nan")
        normed = np.full(ref.M, math.nan)
    cfg.resolved = {"kernel": k.to_dict(), "alpha": alpha, "M": ref.M, "N": N,
                    "n_clipped": n_clipped}
    cols = [f"x{c}" for c in range(ref.dimension)]
    write_table(out / "reconstruct_grid.csv", [*cols, "raw", "normalized"],
                ([*z, r, n] for z, r, n in zip(ref.points, raw, normed)), cfg.to_json())
    _write_json(out / "reconstruct_summary.json", {
        "run_config": cfg.to_dict(),
        "n_clipped": n_clipped,
        "quadrature_integral_normalized": float(ref.total_mass * np.mean(normed)),
    })
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kcdo", description="Conditional density operator toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, required=True,
                   help="INI file with one section per command")
    p.add_argument("--data", type=Path, help="input CSV (train, query or samples)")
    p.add_argument("--model", type=Path, help="model file (written by fit, read by predict)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _require(value, flag, command):
    if value is None:
        raise ConfigError(f"{command} needs {flag}")
    return value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    cmd = args.command
    try:
        cfg = load_config(args.config, cmd, args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if cmd == "donut":
            return cmd_donut(cfg, out)
        if cmd == "bound-check":
            return cmd_bound_check(cfg, out)
        data = _require(args.data, "--data", cmd)
        if not data.is_file():
            raise DataError(f"data file not found: {data}")
        if cmd == "reconstruct":
            return cmd_reconstruct(cfg, data, out)
        if cmd == "fit":
            return cmd_fit(cfg, data, args.model or out / "model.kcdo")
        return cmd_predict(cfg, data, _require(args.model, "--model", cmd), out)
    except ConfigError as exc:
        print(f"kcdo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularSystemError, NumericFailure) as exc:
        print(f"kcdo: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ModelFormatError, ValueError, OSError) as exc:
        print(f"kcdo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
