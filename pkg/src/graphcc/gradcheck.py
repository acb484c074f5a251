"""Analytic-vs-numerical gradient comparison for the full pretraining loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch.overrides import TorchFunctionMode

from .augmentation import make_view_batch
from .config import TrainConfig
from .encoder import build_model
from .errors import NumericError
from .training import derive_seed, train_step_loss


def tiny_config(seed: int = 0) -> TrainConfig:
    """N=3 sensors, k=4 windows of f=8, kbar=2, d=8; used with B=2 samples."""
    return TrainConfig(seed=seed).replace(**{
        "aug.window_len": 8,
        "aug.max_segments_strong": 4,
        "model.d": 8,
        "model.kbar": 2,
        "train.batch_size": 2,
    })


class _BranchRecorder(TorchFunctionMode):
    """Records every discrete branch taken in a forward pass.

    ReLU signs, max-pool argmax positions and boolean ``where`` masks (the
    top-s edge selection). Two evaluations with equal records lie on the same
    smooth piece of the loss.
    """

    def __init__(self):
        super().__init__()
        self.pattern = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        kwargs = kwargs or {}
        name = getattr(func, "__name__", "")
        if name == "relu":
            self.pattern.append(args[0].detach() > 0)
        elif name == "max_pool1d":
            kw = {k: v for k, v in kwargs.items() if k != "return_indices"}
            self.pattern.append(F.max_pool1d_with_indices(*args, **kw)[1])
        elif name == "where" and len(args) == 3 and args[0].dtype == torch.bool:
            self.pattern.append(args[0].detach().clone())
        return func(*args, **kwargs)


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


@dataclass
class GroupResult:
    checked: int
    size: int
    max_rel_error: float
    worst: str
    straddling: int = 0


@dataclass
class GradCheckReport:
    groups: dict[str, GroupResult]
    tolerance: float
    step: float
    loss: float
    failures: list[str] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max(g.max_rel_error for g in self.groups.values())

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = [f"loss={self.loss:.6g} step={self.step:g} tolerance={self.tolerance:g}"]
        for name, g in self.groups.items():
            out.append(f"{name:<11} checked {g.checked:>4}/{g.size:<5} max rel err {g.max_rel_error:.3e}"
                       f" (worst {g.worst}, {g.straddling} skipped at kinks)")
        return out


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(cfg: TrainConfig | None = None, seed: int = 0, batch_size: int = 2,
                   num_sensors: int = 3, num_windows: int = 4, per_group: int = 200,
                   step: float = 1e-5, tolerance: float = 1e-3, floor: float = 1e-5,
                   raise_on_failure: bool = False) -> GradCheckReport:
    """Compare autograd with central differences on up to ``per_group`` entries of every group.

    Runs in float64 with fixed views and fixed edge draws so the loss is a
    deterministic function of the parameters. Relative error uses
    ``max(|analytic|, |numeric|, floor)`` as the denominator; the floor keeps
    exactly-zero gradients (attention key biases) from dividing round-off by
    round-off. A coordinate whose +-step stencil flips a ReLU, max-pool or
    top-s decision has no valid central difference; it is counted in
    ``straddling`` and replaced by the next sampled coordinate.
    """
    cfg = (cfg or tiny_config(seed)).copy()
    length = num_windows * cfg.aug.window_len
    cfg.validate(num_sensors, length)
    s_weak, s_strong = cfg.graph.resolve_edges(num_sensors)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch_size, num_sensors, length)).astype(np.float32)
    weak, strong = make_view_batch(x, cfg.aug, seed, np.arange(batch_size))
    weak = torch.from_numpy(weak).double()
    strong = torch.from_numpy(strong).double()
    model = build_model(cfg, num_windows, seed=seed, dtype=torch.float64)
    step_seed = derive_seed(seed, 99)

    def loss_value():
        return train_step_loss(model, weak, strong, cfg, s_weak, s_strong, step_seed).total

    def traced_value():
        with _BranchRecorder() as rec:
            value = loss_value()
        return value, rec.pattern

    loss, base_pattern = traced_value()
    params = [p for _, p in model.named_parameters()]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = {
        name: (g if g is not None else torch.zeros_like(p)).detach()
        for (name, p), g in zip(model.named_parameters(), grads)
    }

    pick = np.random.default_rng([seed, 1])
    groups = {}
    failures = []
    with torch.no_grad():
        for group, members in model.param_groups().items():
            flat = [(name, p, i) for name, p in members for i in range(p.numel())]
            order = pick.permutation(len(flat))
            worst, worst_name, checked, straddling = 0.0, "", 0, 0
            for j in order:
                if checked == per_group:
                    break
                name, p, i = flat[j]
                view = p.view(-1)
                orig = view[i].item()
                view[i] = orig + step
                up, up_pattern = traced_value()
                view[i] = orig - step
                down, down_pattern = traced_value()
                view[i] = orig
                if not (_same_branches(up_pattern, base_pattern) and _same_branches(down_pattern, base_pattern)):
                    straddling += 1
                    continue
                checked += 1
                numeric = (up.item() - down.item()) / (2 * step)
                err = relative_error(analytic[name].view(-1)[i].item(), numeric, floor)
                if err > worst:
                    worst, worst_name = err, f"{name}[{i}]"
            groups[group] = GroupResult(checked, len(flat), worst, worst_name, straddling)
            if worst > tolerance:
                failures.append(group)
    report = GradCheckReport(groups, tolerance, step, loss.item(), failures)
    if raise_on_failure and failures:
        raise NumericError(f"gradient check failed for parameter groups: {', '.join(failures)}")
    return report


def analytic_gradients(cfg: TrainConfig, seed: int = 0, batch_size: int = 2, num_sensors: int = 3,
                       num_windows: int = 4) -> dict[str, torch.Tensor]:
    """Autograd gradients of the total loss on the gradient-check setup."""
    length = num_windows * cfg.aug.window_len
    cfg = cfg.copy().validate(num_sensors, length)
    s_weak, s_strong = cfg.graph.resolve_edges(num_sensors)
    x = np.random.default_rng(seed).normal(size=(batch_size, num_sensors, length)).astype(np.float32)
    weak, strong = make_view_batch(x, cfg.aug, seed, np.arange(batch_size))
    model = build_model(cfg, num_windows, seed=seed, dtype=torch.float64)
    loss = train_step_loss(model, torch.from_numpy(weak).double(), torch.from_numpy(strong).double(),
                           cfg, s_weak, s_strong, derive_seed(seed, 99)).total
    loss.backward()
    return {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in model.named_parameters()}
