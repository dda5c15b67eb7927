"""Command-line entry points.

The CLI is a thin layer over the library: ``simulate`` runs seeded Monte
Carlo batches, ``replay`` feeds a recorded sensor log through the
estimator, ``report`` aggregates run directories into comparison tables,
``observability`` prints the rank analysis and ``serve`` starts the HTTP
service that wraps the same core.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunSettings, load_config
from .errors import EstimatorError
from .estimator import SlidingWindowEstimator
from .logio import (
    export_log,
    export_truth,
    ingest_log,
    read_summary,
    read_truth,
    write_series,
    write_summary,
    write_timing,
)
from .metrics import rmse_euclidean, rmse_per_axis, savitzky_golay
from .model import build_observation, build_transition, observability_rank
from .simulation import batch_means, run_simulation, seed_sequence


def _load_settings(path) -> RunSettings:
    if path is None:
        return RunSettings()
    return load_config(path)


def _summary_from_metrics(m, seed: int, steps: int) -> dict:
    return {
        "seed": seed,
        "steps": steps,
        "rmse_pos": m.rmse_pos,
        "rmse_x": float(m.rmse_axes[0]),
        "rmse_y": float(m.rmse_axes[1]),
        "rmse_z": float(m.rmse_axes[2]),
        "kld_q_diag": m.kld_q_diag,
        "kld_q_full": m.kld_q_full,
        "kld_r_diag": m.kld_r_diag,
        "kld_r_full": m.kld_r_full,
        "drag_rel_rmse_pct": m.drag_rel_rmse_pct,
    }


def cmd_simulate(args) -> int:
    settings = _load_settings(args.config)
    scenario = replace(settings.scenario, seed=args.seed if args.seed is not None
                       else settings.scenario.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    seeds = seed_sequence(scenario.seed, args.runs)
    failures = 0
    per_run = []
    t_start = time.perf_counter()
    for i, run_seed in enumerate(seeds):
        run_dir = out_dir / f"run_{i:03d}"
        run_dir.mkdir(exist_ok=True)
        sc = replace(scenario, seed=int(run_seed))
        t_run = time.perf_counter()
        try:
            truth, results, m = run_simulation(sc, settings.estimator,
                                               truth_init=settings.truth_init)
        except EstimatorError as exc:
            failures += 1
            (run_dir / "failed.txt").write_text(f"{exc}\n", encoding="utf-8")
            print(f"run {i}: FAILED ({exc})", file=sys.stderr)
            continue
        write_series(run_dir / "series.csv", results)
        write_summary(run_dir / "summary.txt",
                      _summary_from_metrics(m, int(run_seed), sc.steps))
        write_timing(run_dir / "timing.txt", time.perf_counter() - t_run)
        if args.export_logs:
            export_log(run_dir / "log.csv", truth, sc.dt)
            export_truth(run_dir / "truth.csv", truth)
        per_run.append(m)

    summary = {"runs": args.runs, "base_seed": scenario.seed, "failed": failures}
    summary.update(batch_means(per_run))
    write_summary(out_dir / "summary.txt", summary)
    write_timing(out_dir / "timing.txt", time.perf_counter() - t_start)
    print(f"{len(per_run)}/{args.runs} runs ok; batch summary in {out_dir/'summary.txt'}")
    return 0 if failures == 0 else 1


def cmd_replay(args) -> int:
    settings = _load_settings(args.config)
    ingest = ingest_log(args.log)
    for row_no, reason in ingest.skipped:
        print(f"warning: skipped row {row_no}: {reason}", file=sys.stderr)

    cfg = settings.estimator
    x0 = settings.replay_x0
    truth_arr = None
    if args.truth is not None:
        truth_arr = read_truth(args.truth)
        x0 = truth_arr[0, 1:7]

    est = SlidingWindowEstimator(cfg, x0, t0=ingest.t0)
    t_run = time.perf_counter()
    results = est.run(ingest.frames)
    elapsed = time.perf_counter() - t_run

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_series(out_dir / "series.csv", results)

    summary: dict = {"log": str(args.log), "frames": len(results),
                     "skipped_rows": len(ingest.skipped)}
    if truth_arr is not None:
        n = min(len(results), truth_arr.shape[0] - 1)
        est_pos = np.array([r.estimate[:3] for r in results[:n]])
        ref_pos = truth_arr[1:n + 1, 1:4]
        if settings.savgol and est_pos.shape[0] >= settings.savgol_frame:
            est_pos = savitzky_golay(est_pos, settings.savgol_order,
                                     settings.savgol_frame)
        axes = rmse_per_axis(est_pos, ref_pos)
        summary.update({
            "rmse_pos": rmse_euclidean(est_pos, ref_pos),
            "rmse_x": float(axes[0]),
            "rmse_y": float(axes[1]),
            "rmse_z": float(axes[2]),
            "savgol": settings.savgol,
        })
    write_summary(out_dir / "summary.txt", summary)
    write_timing(out_dir / "timing.txt", elapsed)
    print(f"replayed {len(results)} frames; report in {out_dir}")
    return 0


def cmd_report(args) -> int:
    rows = []
    keys: list = []
    for d in args.run_dirs:
        p = Path(d) / "summary.txt"
        if not p.exists():
            print(f"error: no summary.txt under {d}", file=sys.stderr)
            return 1
        s = read_summary(p)
        rows.append((Path(d).name, s))
        for k in s:
            if k not in keys:
                keys.append(k)

    widths = {k: max(len(k), *(len(_short(s.get(k, ""))) for _, s in rows)) for k in keys}
    name_w = max(len(n) for n, _ in rows)
    header = "run".ljust(name_w) + "  " + "  ".join(k.rjust(widths[k]) for k in keys)
    print(header)
    for name, s in rows:
        print(name.ljust(name_w) + "  "
              + "  ".join(_short(s.get(k, "")).rjust(widths[k]) for k in keys))

    if args.out is not None:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run"] + keys)
            for name, s in rows:
                w.writerow([name] + [s.get(k, "") for k in keys])
        print(f"wrote {args.out}")
    return 0


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_observability(args) -> int:
    settings = _load_settings(args.config)
    cfg = settings.estimator
    pos = np.array([float(p) for p in args.pos.split(",")])
    if pos.shape != (3,):
        print("error: --pos expects three comma-separated values", file=sys.stderr)
        return 1
    dt = args.dt if args.dt is not None else settings.scenario.dt
    mu = cfg.mu0 if args.drag is None else np.diag(
        [float(p) for p in args.drag.split(",")])

    A = build_transition(dt, mu)
    try:
        C = build_observation(pos)
        raw_rank = observability_rank(A, C)
        raw_note = ""
    except EstimatorError as exc:
        C = np.zeros((4, 6))
        C[1:, 3:] = np.eye(3)
        raw_rank = observability_rank(A, C)
        raw_note = f" (range row dropped: {exc})"
    C_aug = np.vstack([C, np.eye(6)])
    aug_rank = observability_rank(A, C_aug)

    print(f"position {pos.tolist()}, dt {dt}, drag diag {np.diag(mu).tolist()}")
    print(f"raw model rank:       {raw_rank} / 6"
          f" ({'observable' if raw_rank == 6 else 'NOT fully observable'}){raw_note}")
    print(f"augmented model rank: {aug_rank} / 6"
          f" ({'observable' if aug_rank == 6 else 'NOT fully observable'})")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raswe",
                                description="Single-anchor UAV positioning estimator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="run seeded Monte Carlo simulations")
    ps.add_argument("--config", type=Path, default=None)
    ps.add_argument("--runs", type=int, default=100)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--out", type=Path, required=True)
    ps.add_argument("--export-logs", action="store_true",
                    help="also write each run's sensor log and truth CSV")
    ps.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("replay", help="run the estimator over a sensor log")
    pr.add_argument("--config", type=Path, default=None)
    pr.add_argument("--log", type=Path, required=True)
    pr.add_argument("--truth", type=Path, default=None)
    pr.add_argument("--out", type=Path, required=True)
    pr.set_defaults(func=cmd_replay)

    pp = sub.add_parser("report", help="aggregate run summaries into a table")
    pp.add_argument("run_dirs", nargs="+")
    pp.add_argument("--out", type=Path, default=None, help="also write CSV")
    pp.set_defaults(func=cmd_report)

    po = sub.add_parser("observability", help="rank analysis for a configuration")
    po.add_argument("--config", type=Path, default=None)
    po.add_argument("--pos", type=str, required=True, help="x,y,z position")
    po.add_argument("--dt", type=float, default=None)
    po.add_argument("--drag", type=str, default=None, help="drag diagonal d1,d2,d3")
    po.set_defaults(func=cmd_observability)

    pv = sub.add_parser("serve", help="start the HTTP service")
    pv.add_argument("--host", default="127.0.0.1")
    pv.add_argument("--port", type=int, default=8000)
    pv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EstimatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
