"""Command-line entry points: simulate, montecarlo, replay, compare and plot.

Exit codes: 0 success, 2 configuration error, 3 input parse error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, LengthMismatch, NanoLError, NonMonotonicTime, ParseError
from .io import (
    RunConfig, config_json, interpolate_states, load_config, parse_config, parse_sensor_log,
    parse_state_csv, select_legs, write_ground_truth, write_json, write_sensor_log,
    write_state_csv,
)
from .metrics import CHANNELS, error_series, rmse_over_trials
from .sim import (
    CampaignSpec, McSummary, generate_ground_truth, run_log, run_monte_carlo, simulate_log,
    trial_report,
)

EXIT_CONFIG, EXIT_PARSE, EXIT_NUMERIC = 2, 3, 4
THREADS_ENV = "NANO_L_THREADS"


# ---------------------------------------------------------------------------
# Config plumbing


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("{}")
    changes = {}
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "filters", None):
        changes["filters"] = tuple(f.strip() for f in args.filters.split(",") if f.strip())
    if getattr(args, "out", None):
        changes["out"] = args.out
    threads = getattr(args, "threads", None)
    if threads is None and THREADS_ENV in os.environ and hasattr(args, "threads"):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError(f"${THREADS_ENV}", "must be an integer") from None
    if threads is not None:
        changes["threads"] = threads
    try:
        if getattr(args, "max_iters", None) is not None:
            changes["nano"] = dataclasses.replace(cfg.nano, max_iters=args.max_iters)
        return dataclasses.replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError("$", f"command-line override rejected: {exc}") from None


def campaign_spec(cfg: RunConfig) -> CampaignSpec:
    return CampaignSpec(
        profile=cfg.trajectory, mode=cfg.mode, landmarks=cfg.landmarks,
        legs=tuple(cfg.leg_geometries().items()), gait_period=cfg.gait_period,
        noise=None if cfg.noiseless else cfg.noise, filter_noise=cfg.noise,
        sigma_cam=cfg.sigma_cam, filters=cfg.filters, nano=cfg.nano,
        p0_rot=cfg.initial_cov.rotation, p0_other=cfg.initial_cov.other,
        re_window=cfg.re_window,
    )


def _run_dir(cfg: RunConfig, command: str) -> tuple[str, Path]:
    """Run id from the config (or a hash of it) and the output directory."""
    doc = config_json(cfg)
    doc.pop("threads")
    doc.pop("out")
    digest = hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:10]
    run_id = cfg.run_id or f"{command}-{digest}"
    return run_id, Path(cfg.out) / run_id


# ---------------------------------------------------------------------------
# Result serialization


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def summary_json(summary: McSummary, run_id: str, command: str, cfg: RunConfig, filters) -> dict:
    return {
        "schema_version": 1,
        "run_id": run_id,
        "command": command,
        "mode": cfg.mode,
        "filters": list(filters),
        "base_seed": cfg.seed,
        "trials_ok": list(summary.trials),
        "failed": summary.failed,
        "t": _floats(summary.t),
        "rmse_curve": {n: {c: _floats(summary.rmse_curve[n][c]) for c in CHANNELS} for n in filters},
        "trial_rmse": {n: {c: _floats(summary.trial_rmse[n][c]) for c in CHANNELS} for n in filters},
        "mean_rmse": {n: {c: float(np.mean(summary.trial_rmse[n][c])) if summary.trials else None
                          for c in CHANNELS} for n in filters},
    }


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    arr = np.asarray(vals, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def metrics_json(reports: dict, run_id: str, window: float) -> dict:
    """ATE and RE mean/std across trials (datasets) for each filter."""
    out = {"schema_version": 1, "run_id": run_id, "re_window": window, "filters": {}}
    for name, rows in reports.items():
        entry = {}
        for ch in CHANNELS:
            entry[f"ate_{ch}"] = _mean_std([r["ate"][ch] for r in rows])
            entry[f"re_{ch}"] = _mean_std([r["re"][ch] if r["re"] else None for r in rows])
        out["filters"][name] = entry
    return out


def timing_json(step_times: dict, wall: float) -> dict:
    out = {"wall_clock_s": wall, "update_s": {}}
    for name, times in step_times.items():
        t = np.asarray(times, dtype=float)
        out["update_s"][name] = None if t.size == 0 else {
            "count": int(t.size), "mean": float(t.mean()), "median": float(np.median(t)),
            "p95": float(np.percentile(t, 95)), "max": float(t.max()),
        }
    return out


def _write_estimates(run_dir: Path, estimates: dict) -> None:
    for name, est in estimates.items():
        write_state_csv(run_dir / f"est_{name}.csv", est.t, est.R, est.v, est.p)


def _write_bundle(run_dir, cfg, run_id, command, summary, wall, emit_plots=True):
    write_json(run_dir / "config.json", config_json(cfg))
    doc = summary_json(summary, run_id, command, cfg, cfg.filters)
    write_json(run_dir / "summary.json", doc)
    write_json(run_dir / "metrics.json", metrics_json(summary.reports, run_id, cfg.re_window))
    write_json(run_dir / "timing.json", timing_json(summary.step_times, wall))
    _write_estimates(run_dir, summary.first_estimates)
    if emit_plots:
        from .plots import render_summary
        render_summary(doc, run_dir / "plots")


# ---------------------------------------------------------------------------
# Commands


def cmd_montecarlo(args) -> int:
    cfg = _resolve_config(args)
    run_id, run_dir = _run_dir(cfg, "montecarlo")
    spec = campaign_spec(cfg)
    t0 = time.perf_counter()
    summary = run_monte_carlo(cfg.trials, spec, cfg.seed, cfg.threads)
    wall = time.perf_counter() - t0
    write_ground_truth(run_dir / "ground_truth.csv", generate_ground_truth(cfg.trajectory))
    _write_bundle(run_dir, cfg, run_id, "montecarlo", summary, wall, not args.no_plots)
    for f in summary.failed:
        print(f"trial {f['trial']} failed: {f['error']}", file=sys.stderr)
    print(f"{len(summary.trials)}/{cfg.trials} trials in {wall:.1f} s -> {run_dir}")
    for name in cfg.filters:
        if summary.trials:
            print(f"  {name:6s} mean RMSE pos {summary.mean_rmse(name, 'pos'):.5f} m, "
                  f"ori {summary.mean_rmse(name, 'ori'):.5f} rad")
    return 0 if summary.trials else EXIT_NUMERIC


def cmd_simulate(args) -> int:
    """One seeded trial; also writes the sensor log and ground truth it used."""
    cfg = dataclasses.replace(_resolve_config(args), trials=1)
    run_id, run_dir = _run_dir(cfg, "simulate")
    spec = campaign_spec(cfg)
    gt = generate_ground_truth(cfg.trajectory)
    log = simulate_log(spec, gt, cfg.seed)
    write_sensor_log(run_dir / "sensors.csv", log)
    write_ground_truth(run_dir / "ground_truth.csv", gt)
    t0 = time.perf_counter()
    summary = run_monte_carlo(1, spec, cfg.seed, 1)
    wall = time.perf_counter() - t0
    if summary.failed:
        print(summary.failed[0]["error"], file=sys.stderr)
        return EXIT_NUMERIC
    _write_bundle(run_dir, cfg, run_id, "simulate", summary, wall, not args.no_plots)
    print(f"simulated {gt.t[-1]:.2f} s, {len(log)} samples -> {run_dir}")
    return 0


def replay(cfg: RunConfig, log_path, gt_path):
    """Run the configured filters on recorded files; returns ``(summary, ground truth)``."""
    log = parse_sensor_log(log_path, cfg.sigma_cam)
    if len(log) < 2:
        raise ParseError(2, "t", "a replay needs at least two samples")
    if log.mode == "legged":
        if cfg.mode != "legged":
            raise ConfigError("$.mode", "sensor log is legged but config mode is landmark")
        log = select_legs(log, cfg.legs)
    else:
        if cfg.mode != "landmark":
            raise ConfigError("$.mode", "sensor log has landmark columns but config mode is legged")
        lm = np.asarray(cfg.landmarks, dtype=float)
        if len(lm) != log.obs.shape[1]:
            raise ConfigError("$.landmarks", f"log has {log.obs.shape[1]} landmarks, config {len(lm)}")
        log = dataclasses.replace(log, landmarks=lm)
    gt_raw = parse_state_csv(gt_path)
    try:
        gt = interpolate_states(gt_raw, log.t)
    except ValueError as exc:
        raise ParseError(2, "t", f"ground truth does not cover the sensor log: {exc}") from None
    spec = campaign_spec(cfg)
    res = run_log(spec, log, (gt.R[0], gt.v[0], gt.p[0]))
    errors, curves, trial_rmse, reports = {}, {}, {}, {}
    for name, est in res.estimates.items():
        e = error_series(est, gt)
        errors[name] = {c: getattr(e, c)[None, :] for c in CHANNELS}
        curves[name] = {c: rmse_over_trials(errors[name][c]) for c in CHANNELS}
        trial_rmse[name] = {c: np.sqrt(np.mean(errors[name][c] ** 2, axis=1)) for c in CHANNELS}
        reports[name] = [trial_report(est, gt, cfg.re_window)]
    summary = McSummary(log.t.copy(), [0], [], errors, curves, trial_rmse, reports,
                        res.step_times, res.estimates)
    return summary, gt


def cmd_replay(args) -> int:
    cfg = _resolve_config(args)
    log_path = args.log or cfg.sensor_log
    gt_path = args.gt or cfg.ground_truth
    if not log_path or not gt_path:
        raise ConfigError("$", "replay needs a sensor log and a ground truth (config or --log/--gt)")
    cfg = dataclasses.replace(cfg, sensor_log=str(log_path), ground_truth=str(gt_path), trials=1)
    run_id, run_dir = _run_dir(cfg, "replay")
    t0 = time.perf_counter()
    summary, gt = replay(cfg, log_path, gt_path)
    wall = time.perf_counter() - t0
    write_state_csv(run_dir / "ground_truth.csv", gt.t, gt.R, gt.v, gt.p)
    _write_bundle(run_dir, cfg, run_id, "replay", summary, wall, not args.no_plots)
    print(f"replayed {len(summary.t)} samples -> {run_dir}")
    return 0


def _dataset_rows(gt, estimates: dict, window: float) -> dict:
    return {name: trial_report(est, gt, window) for name, est in estimates.items()}


def _fmt_cell(stat, scale=1.0):
    if stat is None:
        return "n/a"
    return f"{stat['mean'] * scale:.4f} ({stat['std'] * scale:.4f})"


def compare_table(datasets: list[dict], timing: dict, filters) -> str:
    """Table of ATE/RE mean (std) across datasets plus a relative-difference table."""
    cols = [("ate", "pos"), ("ate", "ori"), ("re", "pos"), ("re", "ori")]
    stats = {}
    for name in filters:
        stats[name] = {}
        for kind, ch in cols:
            vals = [d[name][kind][ch] if d[name][kind] else None for d in datasets]
            stats[name][(kind, ch)] = _mean_std(vals)
    head = ["filter", "ATE pos (m)", "ATE ori (deg)", "RE pos (m)", "RE ori (deg)", "time/step (ms)"]
    rows = []
    for name in filters:
        cells = [name]
        for kind, ch in cols:
            cells.append(_fmt_cell(stats[name][(kind, ch)], np.degrees(1.0) if ch == "ori" else 1.0))
        t = timing.get(name)
        cells.append("n/a" if t is None else f"{t * 1e3:.4f}")
        rows.append(cells)
    ref = filters[0]
    rel_rows = []
    for name in filters[1:]:
        cells = [f"{name} vs {ref}"]
        for key in cols:
            a, b = stats[name][key], stats[ref][key]
            if a is None or b is None:
                cells.append("n/a")
            elif a["mean"] == b["mean"]:
                cells.append("0.00%")
            elif b["mean"] == 0:
                cells.append("inf")
            else:
                cells.append(f"{100.0 * (a['mean'] - b['mean']) / b['mean']:+.2f}%")
        cells.append("")
        rel_rows.append(cells)
    widths = [max(len(r[i]) for r in [head] + rows + rel_rows) for i in range(len(head))]

    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(head)] + [line(r) for r in rows]
    if rel_rows:
        out += ["", line(["relative"] + head[1:5])] + [line(r[:5]) for r in rel_rows]
    return "\n".join(out)


def cmd_compare(args) -> int:
    window = args.window
    datasets, timing_acc = [], {}
    filters = None
    if args.est:
        if not args.gt:
            raise ConfigError("--gt", "required with --est")
        gt = parse_state_csv(args.gt)
        ests = {}
        for item in args.est:
            name, _, path = item.partition("=")
            if not path:
                raise ConfigError("--est", f"expected NAME=PATH, got {item!r}")
            ests[name] = parse_state_csv(path)
        for est in ests.values():
            if len(est.t) != len(gt.t):
                raise LengthMismatch("estimate and ground truth have different lengths")
        datasets.append(_dataset_rows(gt, ests, window))
        filters = list(ests)
    for run in args.runs:
        run = Path(run)
        gt = parse_state_csv(run / "ground_truth.csv")
        ests = {p.stem[4:]: parse_state_csv(p) for p in sorted(run.glob("est_*.csv"))}
        if not ests:
            raise ParseError(1, "", f"no est_*.csv files in {run}")
        gt = interpolate_states(gt, next(iter(ests.values())).t)
        datasets.append(_dataset_rows(gt, ests, window))
        names = [n for n in ("nano", "inekf") if n in ests] + sorted(set(ests) - {"nano", "inekf"})
        filters = names if filters is None else [n for n in filters if n in names]
        tpath = run / "timing.json"
        if tpath.exists():
            for name, st in json.loads(tpath.read_text())["update_s"].items():
                if st:
                    timing_acc.setdefault(name, []).append(st["mean"])
    if not datasets:
        raise ConfigError("$", "nothing to compare: give run directories or --gt with --est")
    timing = {k: float(np.mean(v)) for k, v in timing_acc.items()}
    print(compare_table(datasets, timing, filters))
    return 0


def cmd_plot(args) -> int:
    from .plots import render_run
    for path in render_run(args.run):
        print(path)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nanol", description="NANO-L filtering experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, campaign=False):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--filters", help="comma-separated subset of nano,inekf")
        sp.add_argument("--max-iters", type=int, dest="max_iters")
        sp.add_argument("--no-plots", action="store_true", dest="no_plots")
        if campaign:
            sp.add_argument("--trials", type=int)
            sp.add_argument("--threads", type=int,
                            help=f"worker processes (default: ${THREADS_ENV} or the config)")

    sp = sub.add_parser("simulate", help="one simulated trial with its sensor log")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("montecarlo", help="seeded Monte-Carlo campaign")
    common(sp, campaign=True)
    sp.set_defaults(func=cmd_montecarlo)
    sp = sub.add_parser("replay", help="run the filters on recorded CSV files")
    common(sp)
    sp.add_argument("--log", help="sensor log CSV")
    sp.add_argument("--gt", help="ground-truth CSV")
    sp.set_defaults(func=cmd_replay)
    sp = sub.add_parser("compare", help="ATE/RE table across run directories")
    sp.add_argument("runs", nargs="*", help="run directories")
    sp.add_argument("--gt", help="ground-truth CSV for --est files")
    sp.add_argument("--est", action="append", help="NAME=PATH estimate CSV")
    sp.add_argument("--window", type=float, default=3.0, help="RE window (s)")
    sp.set_defaults(func=cmd_compare)
    sp = sub.add_parser("plot", help="render SVG figures from summary.json")
    sp.add_argument("run", help="run directory")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, NonMonotonicTime, LengthMismatch) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NanoLError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
