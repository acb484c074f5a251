"""Command-line interface: ``graphcc {generate,pretrain,eval,ablate,sweep,gradcheck}``.

Exit codes: 0 success, 2 usage, 3 validation, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import uuid
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_override
from .dataset import SyntheticSpec, generate_synthetic, load_split_dir, save_dataset, train_test_split
from .errors import ConfigError, GCCError
from .experiments import Row, ablate, parse_grid, parse_variants, plot_sweep, sweep, write_csv
from .gradcheck import gradient_check
from .training import check_compatible, evaluate_checkpoint, pretrain

log = logging.getLogger("graphcc")


def append_record(path, record: dict) -> None:
    """One JSON object per line; never rewrites earlier lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def run_record(command, args, started, cfg: TrainConfig | None = None, metrics=None, history=None,
               artifacts=None, seed=None) -> dict:
    summary = None
    if history:
        summary = {"epochs": len(history), "first_total": history[0]["total"], "last": history[-1]}
    return {
        "run_id": uuid.uuid4().hex[:12],
        "command": command,
        "argv": args.argv,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": cfg.flat() if cfg else None,
        "config_hash": cfg.hash() if cfg else None,
        "seed": seed if seed is not None else (cfg.seed if cfg else None),
        "metrics": metrics,
        "loss_history": summary,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "artifacts": {k: str(v) for k, v in (artifacts or {}).items()},
        "version": __version__,
    }


def resolve_config(args) -> TrainConfig:
    overrides = dict(parse_override(item) for item in args.set or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


# commands


def cmd_generate(args) -> int:
    started = time.perf_counter()
    spec = SyntheticSpec(n=args.n, N=args.sensors, L=args.length, num_classes=args.classes,
                         noise_std=args.noise, seed=args.seed)
    train, test = train_test_split(generate_synthetic(spec), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.gccd")
    save_dataset(test, out / "test.gccd")
    print(f"wrote {out / 'train.gccd'} ({len(train)} samples) and {out / 'test.gccd'} ({len(test)} samples)")
    append_record(args.runs, run_record("generate", args, started, seed=args.seed,
                                        artifacts={"train": out / "train.gccd", "test": out / "test.gccd"}))
    return 0


def cmd_pretrain(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    train, test = load_split_dir(args.data)
    cfg.validate(*train.shape)

    def progress(record, _model):
        log.info("epoch %d/%d total %.4f", record["epoch"], cfg.train.epochs_pretrain, record["total"])

    ckpt = pretrain(train, cfg, progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    seconds = time.perf_counter() - started
    final = ckpt.history[-1]
    print(f"wrote {out}; final loss total={final['total']:.4f} mwtc={final['mwtc']:.4f} "
          f"nc={final['nc']:.4f} gc={final['gc']:.4f}")
    if args.csv:
        write_csv([Row(f"pretrain:{cfg.hash()}:{cfg.seed}", "pretrain", "", "", cfg.seed, "", "",
                       round(seconds, 3), cfg.hash())], args.csv, append=True)
    append_record(args.runs, run_record("pretrain", args, started, cfg, history=ckpt.history,
                                        artifacts={"checkpoint": out, "data": args.data}))
    return 0


def cmd_eval(args) -> int:
    started = time.perf_counter()
    ckpt = load_checkpoint(args.checkpoint)
    train, test = load_split_dir(args.data)
    check_compatible(train, ckpt)
    cfg = ckpt.config
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    report = evaluate_checkpoint(ckpt, train, test, cfg)
    print(f"accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps(report.record(), sort_keys=True, indent=1) + "\n")
    if args.csv:
        write_csv([Row(f"eval:{cfg.hash()}:{cfg.seed}", "eval", "", "", cfg.seed, report.accuracy,
                       report.macro_f1, round(report.wall_time, 3), cfg.hash())], args.csv, append=True)
    metrics = {"accuracy": report.accuracy, "macro_f1": report.macro_f1, "per_class_f1": report.per_class_f1}
    append_record(args.runs, run_record("eval", args, started, cfg, metrics=metrics, history=ckpt.history,
                                        artifacts={"checkpoint": args.checkpoint, "data": args.data}))
    return 0


def _print_row(row: Row) -> None:
    print(f"{row.variant_or_param} {row.value} seed={row.seed} accuracy={row.accuracy:.4f} "
          f"macro_f1={row.macro_f1:.4f} ({row.wall_time_s:.1f}s)", flush=True)


def cmd_ablate(args) -> int:
    started = time.perf_counter()
    variants = parse_variants(args.variants)
    cfg = resolve_config(args)
    train, test = load_split_dir(args.data)
    rows = ablate(train, test, cfg, variants, args.repetitions, progress=_print_row)
    write_csv(rows, args.csv)
    append_record(args.runs, run_record("ablate", args, started, cfg, metrics={
        r.run_id: {"accuracy": r.accuracy, "macro_f1": r.macro_f1} for r in rows}, artifacts={"csv": args.csv}))
    return 0


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    train, test = load_split_dir(args.data)
    rows = sweep(train, test, cfg, args.param, parse_grid(args.param, args.grid), args.repetitions,
                 progress=_print_row)
    write_csv(rows, args.csv)
    artifacts = {"csv": args.csv}
    if args.plot:
        plot_sweep(rows, args.plot)
        artifacts["plot"] = args.plot
    append_record(args.runs, run_record("sweep", args, started, cfg, metrics={
        r.run_id: {"accuracy": r.accuracy, "macro_f1": r.macro_f1} for r in rows}, artifacts=artifacts))
    return 0


def cmd_gradcheck(args) -> int:
    started = time.perf_counter()
    report = gradient_check(seed=args.seed or 0)
    for line in report.lines():
        print(line)
    print("PASS" if report.passed else f"FAIL: {', '.join(report.failures)}")
    metrics = {g: r.max_rel_error for g, r in report.groups.items()}
    append_record(args.runs, run_record("gradcheck", args, started, seed=args.seed or 0, metrics=metrics))
    return 0 if report.passed else 4


# parser


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (nested or dotted keys)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key; repeatable")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphcc", description="Graph contextual contrasting for sensor series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--runs", default="runs.jsonl", help="append-only run log (default: runs.jsonl)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic train/test split")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--sensors", type=int, default=6)
    p.add_argument("--length", type=int, default=128)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--data", required=True, help="directory holding train.gccd and test.gccd")
    p.add_argument("--out", required=True, help="checkpoint path (.gcck)")
    p.add_argument("--csv", help="append a row to this CSV")
    _config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="linear probe on frozen representations")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", help="write the flat report as JSON")
    p.add_argument("--csv", help="append a row to this CSV")
    p.add_argument("--seed", type=int, help="probe seed (default: checkpoint seed)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="complete model plus the five ablations")
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--variants", help="comma list from no-node-aug,no-edge-aug,no-gc,no-nc,no-mwtc (default: all)")
    p.add_argument("--repetitions", type=int, default=10)
    _config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sensitivity sweep over one hyperparameter")
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--param", required=True,
                   choices=["lambda_mwtc", "lambda_nc", "lambda_gc", "s_weak", "s_strong"])
    p.add_argument("--grid", help="comma-separated values (default: standard grid for the parameter)")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--plot", help="write an SVG line chart here")
    _config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="autograd vs finite differences on a tiny config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GCCError as err:
        print(f"graphcc {args.command}: error: {err}", file=sys.stderr)
        return err.exit_code
    except FileNotFoundError as err:
        print(f"graphcc {args.command}: error: {err}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
