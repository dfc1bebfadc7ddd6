"""Command-line entry point: ``specsim <subcommand> ...``.

Exit codes: 0 success, 1 runtime/domain error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import hetero, perf_model, trainer
from .config import load_run_config, resolve_profile_path
from .perf_model import DomainError, ProfileError
from .serving import MODES, ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


def _emit(args, payload, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _load_profile(ref: str):
    try:
        return perf_model.load_profile(resolve_profile_path(ref))
    except (ConfigError, ProfileError) as exc:
        raise _UsageError(str(exc)) from exc


def _fmt(x, spec=".4f"):
    return "never" if x is None else format(x, spec)


def cmd_speedup(args) -> int:
    profile = _load_profile(args.profile)
    rows = perf_model.speedup_table(profile, args.alpha, args.gamma, args.batch)
    lines = [f"{profile.model_name}  alpha={args.alpha} gamma={args.gamma}",
             f"{'batch':>6} {'c':>8} {'beta':>8} {'theory':>8} {'practical':>9} {'alpha*':>8}"]
    for r in rows:
        lines.append(
            f"{r['batch']:>6} {r['c']:>8.4f} {r['beta']:>8.4f} {r['theoretical']:>8.4f} "
            f"{r['practical']:>9.4f} {_fmt(r['breakeven_alpha']):>8}"
        )
    _emit(args, {"model": profile.model_name, "alpha": args.alpha, "gamma": args.gamma, "rows": rows}, "\n".join(lines))
    return EXIT_OK


def cmd_threshold(args) -> int:
    profile = _load_profile(args.profile)
    rows = []
    for b in args.batch or profile.batch_sizes:
        a = perf_model.min_acceptance_for_gain(profile, args.gamma, b)
        ell = None if a is None else perf_model.expected_accept_length(a, args.gamma)
        rows.append({"batch": b, "breakeven_alpha": a, "breakeven_accept_length": ell})
    lines = [f"{'batch':>6} {'alpha*':>8} {'accept_len*':>11}"]
    lines += [f"{r['batch']:>6} {_fmt(r['breakeven_alpha']):>8} {_fmt(r['breakeven_accept_length']):>11}" for r in rows]
    _emit(args, {"model": profile.model_name, "gamma": args.gamma, "rows": rows}, "\n".join(lines))
    return EXIT_OK


def _load_config(args):
    try:
        cfg = load_run_config(args.config)
    except ConfigError as exc:
        raise _UsageError(str(exc)) from exc
    try:
        cfg = cfg.with_overrides(mode=args.mode, seed=args.seed)
    except ConfigError as exc:
        raise _UsageError(str(exc)) from exc
    if args.output_dir is not None:
        cfg.output_dir = Path(args.output_dir)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    csv_path, summary_path = out / "iterations.csv", out / "summary.json"
    written = []
    try:
        metrics = cfg.simulate()
        if args.emit_iterations:
            metrics.write_csv(csv_path)
            written.append(csv_path)
        metrics.write_summary(summary_path)
        written.append(summary_path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    s = metrics.summary()
    text = (
        f"mode={s['mode']} tokens={s['total_tokens']} time_ms={s['total_time_ms']:.1f} "
        f"throughput={s['mean_throughput_tokens_per_s']:.1f} tok/s deploys={sum(p['deploys'] for p in s['phases'])}"
    )
    _emit(args, {k: v for k, v in s.items() if k != "events"}, text)
    return EXIT_OK


def cmd_compare_training(args) -> int:
    if args.prefill_hours is not None or args.train_hours is not None:
        if args.prefill_hours is None or args.train_hours is None:
            raise _UsageError("--prefill-hours and --train-hours go together")
        prof = trainer.TrainerProfile.from_hours(args.dataset_samples, args.train_hours, args.prefill_hours, args.epochs)
    else:
        if args.samples_per_hour is None or args.prefill_samples_per_hour is None:
            raise _UsageError("give either hours or --samples-per-hour/--prefill-samples-per-hour")
        prof = trainer.TrainerProfile(args.samples_per_hour, args.prefill_samples_per_hour, args.epochs)
    rows = trainer.compare_training_modes(args.dataset_samples, prof)
    _emit(args, rows, trainer.format_training_table(rows))
    return EXIT_OK


def cmd_plan(args) -> int:
    try:
        classes = hetero.load_gpu_profiles(args.gpu_profiles)
        counts = hetero.parse_cluster(args.cluster)
    except (OSError, ValueError) as exc:
        raise _UsageError(str(exc)) from exc
    if args.train_class:
        cluster = hetero.make_cluster(counts, args.train_class.split(","), classes)
        rel = hetero.relative_throughput(cluster, args.speedup)
    else:
        cluster, rel = hetero.best_assignment(classes, counts, args.speedup, args.demand, args.calibration)
    payload = {
        "relative_throughput": rel,
        "breakeven_speedup": hetero.breakeven_speedup(cluster),
        "assignment": cluster.describe(),
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def _sweep_one(job):
    config_path, mode, seed = job
    cfg = load_run_config(config_path).with_overrides(mode=mode, seed=seed)
    s = cfg.simulate().summary()
    return {
        "mode": mode,
        "seed": seed,
        "total_tokens": s["total_tokens"],
        "total_time_ms": s["total_time_ms"],
        "mean_throughput_tokens_per_s": s["mean_throughput_tokens_per_s"],
        "speculation_duty_cycle": s["speculation_duty_cycle"],
        "collection_duty_cycle": s["collection_duty_cycle"],
        "flush_count": s["flush_count"],
        "cumulative_storage_bytes": s["cumulative_storage_bytes"],
        "deploys": sum(p["deploys"] for p in s["phases"]),
    }


def cmd_sweep(args) -> int:
    cfg = _load_config(args)  # validates before anything runs
    modes = args.modes.split(",") if args.modes else [cfg.mode]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise _UsageError(f"unknown modes {bad}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    jobs = [(str(args.config), m, s) for m in modes for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_sweep_one, jobs))  # map preserves submission order
    else:
        rows = [_sweep_one(j) for j in jobs]
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "sweep.csv").write_text(buf.getvalue())
    _emit(args, rows, buf.getvalue().rstrip())
    return EXIT_OK


def _batches(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--output-dir", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="specsim", description="Speculative-decoding serving simulator")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--output-dir", default=None, help="directory for output files")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("speedup", parents=[common], help="theoretical/practical speedup per batch size")
    s.add_argument("--profile", default="gpt-oss-120b", help="profile CSV or bundled key")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--gamma", type=int, default=3)
    s.add_argument("--batch", type=_batches, default=None, help="comma list; default: profiled points")
    s.set_defaults(func=cmd_speedup)

    s = sub.add_parser("threshold", parents=[common], help="break-even acceptance per batch size")
    s.add_argument("--profile", default="gpt-oss-120b")
    s.add_argument("--gamma", type=int, default=3)
    s.add_argument("--batch", type=_batches, default=None)
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("simulate", parents=[common], help="run one simulation from a JSON config")
    s.add_argument("config")
    s.add_argument("--mode", choices=MODES, default=None)
    s.add_argument("--emit-iterations", action="store_true", help="write the per-iteration CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare-training", parents=[common], help="offline/online/serving-time training cost")
    s.add_argument("--dataset-samples", type=float, default=100_000)
    s.add_argument("--epochs", type=int, default=3)
    s.add_argument("--prefill-hours", type=float, default=None, help="one prefill pass over the dataset")
    s.add_argument("--train-hours", type=float, default=None, help="all training epochs")
    s.add_argument("--samples-per-hour", type=float, default=None)
    s.add_argument("--prefill-samples-per-hour", type=float, default=None)
    s.set_defaults(func=cmd_compare_training)

    s = sub.add_parser("plan", parents=[common], help="heterogeneous inference/training split")
    s.add_argument("--cluster", required=True, help="e.g. H100:8,MI250:4")
    s.add_argument("--train-class", default=None, help="classes that train; omit to search")
    s.add_argument("--speedup", type=float, required=True)
    s.add_argument("--demand", type=float, default=None, help="required training capacity")
    s.add_argument("--calibration", type=float, default=1.0)
    s.add_argument("--gpu-profiles", default=None)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("sweep", parents=[common], help="grid of modes x seeds, one summary row each")
    s.add_argument("config")
    s.add_argument("--modes", default=None, help="comma list of modes")
    s.add_argument("--seeds", default=None, help="comma list of seeds")
    s.add_argument("--mode", default=None, help=argparse.SUPPRESS)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ValueError, hetero.PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
