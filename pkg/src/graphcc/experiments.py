"""Ablation variants, sensitivity sweeps and their CSV rows."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .config import TrainConfig
from .dataset import MTSDataset
from .errors import ConfigError
from .training import evaluate_checkpoint, pretrain

CSV_COLUMNS = ("run_id", "command", "variant_or_param", "value", "seed", "accuracy", "macro_f1",
               "wall_time_s", "config_hash")

ABLATIONS = ("no-node-aug", "no-edge-aug", "no-gc", "no-nc", "no-mwtc")
VARIANTS = ("complete", *ABLATIONS)

LAMBDA_GRID = (0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 1.0)
SWEEP_KEYS = {
    "lambda_mwtc": "loss.lambda_mwtc",
    "lambda_nc": "loss.lambda_nc",
    "lambda_gc": "loss.lambda_gc",
    "s_weak": "graph.s_weak",
    "s_strong": "graph.s_strong",
}


class UsageError(ConfigError):
    exit_code = 2


@dataclass
class Row:
    run_id: str
    command: str
    variant_or_param: str
    value: str
    seed: int
    accuracy: float | str
    macro_f1: float | str
    wall_time_s: float
    config_hash: str


def variant_config(cfg: TrainConfig, variant: str, num_sensors: int) -> TrainConfig:
    if variant == "complete":
        return cfg.copy()
    if variant == "no-node-aug":
        return cfg.replace(**{"aug.noise_std_ratio": 0.0, "aug.max_segments_weak": 1,
                              "aug.max_segments_strong": 1})
    if variant == "no-edge-aug":
        return cfg.replace(**{"graph.s_weak": num_sensors, "graph.s_strong": num_sensors})
    if variant in ("no-gc", "no-nc", "no-mwtc"):
        return cfg.replace(**{f"loss.lambda_{variant[3:]}": 0.0})
    raise UsageError(f"unknown variant {variant!r}; valid ablations: {', '.join(ABLATIONS)}")


def parse_variants(text: str | None) -> list[str]:
    """Comma list of ablation names; ``complete`` is always run first."""
    if not text:
        return list(VARIANTS)
    names = [v.strip() for v in text.split(",") if v.strip()]
    for name in names:
        if name not in VARIANTS:
            raise UsageError(f"unknown variant {name!r}; valid ablations: {', '.join(ABLATIONS)}")
    return ["complete"] + [v for v in ABLATIONS if v in names]


def run_once(train: MTSDataset, test: MTSDataset, cfg: TrainConfig):
    """Pretrain then probe; returns (checkpoint, report, seconds)."""
    started = time.perf_counter()
    ckpt = pretrain(train, cfg)
    report = evaluate_checkpoint(ckpt, train, test)
    return ckpt, report, time.perf_counter() - started


def _row(command, label, value, rep, cfg, report, seconds) -> Row:
    return Row(f"{command}:{label}:{value}:r{rep}", command, label, str(value), cfg.seed,
               report.accuracy, report.macro_f1, round(seconds, 3), cfg.hash())


def ablate(train: MTSDataset, test: MTSDataset, cfg: TrainConfig, variants=None, repetitions: int = 10,
           progress=None) -> list[Row]:
    """One row per variant per repetition; repetition r reseeds with ``cfg.seed + r``."""
    if repetitions < 1:
        raise ConfigError("must be >= 1", "repetitions")
    variants = list(variants) if variants is not None else list(VARIANTS)
    num_sensors = train.shape[0]
    configs = {v: variant_config(cfg, v, num_sensors) for v in variants}
    for c in configs.values():
        c.validate(*train.shape)
    rows = []
    for rep in range(repetitions):
        for variant in variants:
            run_cfg = configs[variant].replace(seed=cfg.seed + rep)
            _, report, seconds = run_once(train, test, run_cfg)
            rows.append(_row("ablate", variant, "", rep, run_cfg, report, seconds))
            if progress:
                progress(rows[-1])
    order = {v: i for i, v in enumerate(VARIANTS)}
    return sorted(rows, key=lambda r: (order[r.variant_or_param], r.seed))


def default_grid(param: str, cfg: TrainConfig, num_sensors: int) -> list:
    if param.startswith("lambda_"):
        return list(LAMBDA_GRID)
    if param == "s_weak":
        return list(range(1, num_sensors + 1))
    # s_strong may not exceed the weak view's retained edges
    s_weak, _ = cfg.graph.resolve_edges(num_sensors)
    return list(range(1, s_weak + 1))


def parse_grid(param: str, text: str | None) -> list | None:
    if text is None:
        return None
    cast = int if param.startswith("s_") else float
    try:
        values = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}", param) from None
    if not values:
        raise ConfigError("empty grid", param)
    return values


def sweep_configs(cfg: TrainConfig, param: str, grid, num_sensors: int, length: int) -> list[TrainConfig]:
    if param not in SWEEP_KEYS:
        raise UsageError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_KEYS)}")
    out = []
    for value in grid:
        c = cfg.replace(**{SWEEP_KEYS[param]: value})
        c.validate(num_sensors, length)
        out.append(c)
    return out


def sweep(train: MTSDataset, test: MTSDataset, cfg: TrainConfig, param: str, grid=None,
          repetitions: int = 10, progress=None) -> list[Row]:
    """One row per grid value per repetition, other settings fixed at ``cfg``."""
    if repetitions < 1:
        raise ConfigError("must be >= 1", "repetitions")
    if param not in SWEEP_KEYS:
        raise UsageError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_KEYS)}")
    grid = list(grid) if grid is not None else default_grid(param, cfg, train.shape[0])
    configs = sweep_configs(cfg, param, grid, *train.shape)  # fail before any training
    rows = []
    for rep in range(repetitions):
        for value, c in zip(grid, configs):
            run_cfg = c.replace(seed=cfg.seed + rep)
            _, report, seconds = run_once(train, test, run_cfg)
            rows.append(_row("sweep", param, value, rep, run_cfg, report, seconds))
            if progress:
                progress(rows[-1])
    position = {str(v): i for i, v in enumerate(grid)}
    return sorted(rows, key=lambda r: (position[r.value], r.seed))


def write_csv(rows, path, append: bool = False) -> None:
    path = Path(path)
    fresh = not (append and path.exists() and path.stat().st_size)
    with path.open("a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if fresh:
            writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def plot_sweep(rows, path) -> None:
    """Mean accuracy and macro-F1 per grid value as an SVG line chart."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise UsageError("plotting needs matplotlib (pip install matplotlib)") from None
    values, acc, f1 = [], {}, {}
    for r in rows:
        if r.value not in acc:
            values.append(r.value)
        acc.setdefault(r.value, []).append(float(r.accuracy))
        f1.setdefault(r.value, []).append(float(r.macro_f1))
    xs = range(len(values))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, [sum(acc[v]) / len(acc[v]) for v in values], marker="o", label="accuracy")
    ax.plot(xs, [sum(f1[v]) / len(f1[v]) for v in values], marker="s", label="macro-F1")
    ax.set_xticks(list(xs), values)
    ax.set_xlabel(rows[0].variant_or_param if rows else "")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
