"""Self-supervised pretraining, representation extraction and the linear probe."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .augmentation import make_view_batch, segment_windows
from .checkpoint import Checkpoint
from .config import TrainConfig
from .dataset import MTSDataset, batch_iter, normalize_sensors
from .encoder import build_model, forward_view
from .errors import ConfigError, NumericError
from .losses import total_loss

log = logging.getLogger(__name__)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _prepared(ds: MTSDataset, cfg: TrainConfig) -> np.ndarray:
    values = ds.values
    return normalize_sensors(values) if cfg.aug.normalize else values


def _meta(ds: MTSDataset, cfg: TrainConfig) -> dict:
    n_sensors, length = ds.shape
    return {"num_sensors": n_sensors, "length": length, "num_windows": length // cfg.aug.window_len}


def random_checkpoint(ds: MTSDataset, cfg: TrainConfig) -> Checkpoint:
    """Untrained encoder at its seeded initialization (probe baseline)."""
    n_sensors, length = ds.shape
    cfg = cfg.copy().validate(n_sensors, length)
    meta = _meta(ds, cfg)
    return Checkpoint.from_model(build_model(cfg, meta["num_windows"]), cfg, meta)


def train_step_loss(model, weak, strong, cfg: TrainConfig, s_weak: int, s_strong: int, step_seed: int):
    """Loss breakdown for one batch of (B, N, k, f) views with seeded edge draws."""
    gen_w = torch.Generator().manual_seed(derive_seed(step_seed, 0))
    gen_s = torch.Generator().manual_seed(derive_seed(step_seed, 1))
    trace_w = forward_view(model, weak, s_weak, gen_w)
    trace_s = forward_view(model, strong, s_strong, gen_s)
    return total_loss(trace_w, trace_s, cfg.loss)


def pretrain(ds: MTSDataset, cfg: TrainConfig, progress=None) -> Checkpoint:
    """Self-supervised training; labels are ignored. Deterministic given ``cfg.seed``.

    ``progress(record, model)`` is called after every epoch.
    """
    n_sensors, length = ds.shape
    cfg = cfg.copy().validate(n_sensors, length)
    s_weak, s_strong = cfg.graph.resolve_edges(n_sensors)
    meta = _meta(ds, cfg)
    values = _prepared(ds, cfg)
    n = len(ds)
    batch_size = cfg.train.batch_size
    if n < batch_size:
        if n < 2:
            raise ConfigError(f"pretraining needs at least 2 samples, got {n}", "train.batch_size")
        log.warning("batch size %d exceeds dataset size %d; using %d", batch_size, n, n)
        batch_size = n

    model = build_model(cfg, meta["num_windows"])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.learning_rate,
                           betas=(cfg.train.beta1, cfg.train.beta2), eps=cfg.train.eps,
                           weight_decay=cfg.train.weight_decay)
    sched = None
    if cfg.train.lr_schedule == "cosine":
        steps = cfg.train.epochs_pretrain * (n // batch_size)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, steps))

    history = []
    for epoch in range(cfg.train.epochs_pretrain):
        epoch_seed = derive_seed(cfg.seed, epoch)
        sums = {"mwtc": 0.0, "nc": 0.0, "gc": 0.0, "total": 0.0}
        batches = list(batch_iter(n, batch_size, seed=epoch_seed, shuffle=True, pretrain=True))
        for b, idx in enumerate(batches):
            weak, strong = make_view_batch(values[idx], cfg.aug, epoch_seed, idx)
            try:
                losses = train_step_loss(model, torch.from_numpy(weak), torch.from_numpy(strong), cfg,
                                         s_weak, s_strong, derive_seed(epoch_seed, b))
            except NumericError as err:
                raise NumericError(f"{err} at epoch {epoch + 1}, batch {b + 1}") from err
            if not torch.isfinite(losses.total):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}: {losses.item()}")
            opt.zero_grad()
            losses.total.backward()
            opt.step()
            if sched is not None:
                sched.step()
            for key, value in losses.item().items():
                sums[key] += value
        record = {"epoch": epoch + 1, **{k: v / len(batches) for k, v in sums.items()}}
        history.append(record)
        log.info("epoch %d total=%.4f mwtc=%.4f nc=%.4f gc=%.4f", record["epoch"], record["total"],
                 record["mwtc"], record["nc"], record["gc"])
        if progress is not None:
            progress(record, model)
    return Checkpoint.from_model(model, cfg, meta, history)


def check_compatible(ds: MTSDataset, ckpt: Checkpoint) -> None:
    n_sensors, length = ds.shape
    want = (ckpt.meta["num_sensors"], ckpt.meta["num_windows"])
    got = (n_sensors, length // ckpt.config.aug.window_len)
    if want != got:
        raise ConfigError(
            f"dataset shape (N={n_sensors}, L={length}, k={got[1]}) does not match checkpoint "
            f"(N={ckpt.meta['num_sensors']}, L={ckpt.meta['length']}, k={want[1]})",
            "dataset",
        )


@torch.no_grad()
def extract_representations(ds: MTSDataset, ckpt: Checkpoint, batch_size: int = 256) -> np.ndarray:
    """Global features g = [c_1 | ... | c_N] of unaugmented samples, shape (n, N*d)."""
    check_compatible(ds, ckpt)
    cfg = ckpt.config
    model = ckpt.model()
    dtype = next(model.parameters()).dtype
    windows = segment_windows(_prepared(ds, cfg), cfg.aug.window_len)
    n_sensors = ds.shape[0]
    out = []
    for start in range(0, len(ds), batch_size):
        chunk = torch.from_numpy(np.ascontiguousarray(windows[start:start + batch_size])).to(dtype)
        out.append(forward_view(model, chunk, n_sensors).globals.numpy())
    return np.concatenate(out) if out else np.zeros((0, n_sensors * cfg.model.d), np.float32)


def compute_metrics(y_true, y_pred, num_classes: int):
    """Accuracy, macro-F1 over all ``num_classes`` classes, per-class F1 (0 when P+R = 0)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ConfigError("empty label arrays", "y_true")
    if y_true.shape != y_pred.shape:
        raise ConfigError(f"length mismatch {y_true.shape} vs {y_pred.shape}", "y_pred")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ConfigError(f"labels outside [0, {num_classes})", name)
    accuracy = float(np.mean(y_true == y_pred))
    per_class = []
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class.append(float(2 * precision * recall / (precision + recall)) if precision + recall else 0.0)
    return accuracy, float(np.mean(per_class)), per_class


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    per_class_f1: list[float]
    config: dict = field(default_factory=dict)
    seed: int = 0
    wall_time: float = 0.0

    def record(self) -> dict:
        """Flat key-value form."""
        out = {"accuracy": self.accuracy, "macro_f1": self.macro_f1, "seed": self.seed,
               "wall_time": self.wall_time}
        out.update({f"per_class_f1.{i}": v for i, v in enumerate(self.per_class_f1)})
        out.update({f"config.{k}": v for k, v in self.config.items()})
        return out


def linear_evaluate(train_reps, train_labels, test_reps, test_labels, cfg: TrainConfig,
                    num_classes: int | None = None) -> EvalReport:
    """Fit one affine softmax classifier on frozen representations; report test metrics."""
    started = time.perf_counter()
    x_train = torch.as_tensor(np.asarray(train_reps), dtype=torch.float32)
    x_test = torch.as_tensor(np.asarray(test_reps), dtype=torch.float32)
    y_train = torch.as_tensor(np.asarray(train_labels), dtype=torch.long)
    y_test = np.asarray(test_labels)
    if not (torch.isfinite(x_train).all() and torch.isfinite(x_test).all()):
        raise NumericError("non-finite representations")
    if len(torch.unique(y_train)) < 2:
        raise ConfigError("training labels contain a single class", "train_labels")
    if num_classes is None:
        num_classes = int(max(y_train.max().item(), y_test.max())) + 1

    # zero start: the fit is convex, and a random start would outweigh 40 epochs at lr 3e-4
    probe = nn.Linear(x_train.shape[1], num_classes)
    with torch.no_grad():
        probe.weight.zero_()
        probe.bias.zero_()
    opt = torch.optim.Adam(probe.parameters(), lr=cfg.train.learning_rate,
                           betas=(cfg.train.beta1, cfg.train.beta2), eps=cfg.train.eps,
                           weight_decay=cfg.train.weight_decay)
    for epoch in range(cfg.train.epochs_probe):
        for idx in batch_iter(len(x_train), cfg.train.batch_size, seed=derive_seed(cfg.seed, 8, epoch)):
            loss = nn.functional.cross_entropy(probe(x_train[idx]), y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    with torch.no_grad():
        pred = probe(x_test).argmax(dim=1).numpy()
    accuracy, macro_f1, per_class = compute_metrics(y_test, pred, num_classes)
    return EvalReport(accuracy, macro_f1, per_class, cfg.flat(), cfg.seed, time.perf_counter() - started)


def evaluate_checkpoint(ckpt: Checkpoint, train: MTSDataset, test: MTSDataset,
                        cfg: TrainConfig | None = None) -> EvalReport:
    cfg = cfg or ckpt.config
    if train.num_classes == 0:
        raise ConfigError("linear evaluation needs a labeled training split", "dataset")
    started = time.perf_counter()
    report = linear_evaluate(extract_representations(train, ckpt), train.labels,
                             extract_representations(test, ckpt), test.labels, cfg,
                             max(train.num_classes, test.num_classes))
    report.wall_time = time.perf_counter() - started
    return report
