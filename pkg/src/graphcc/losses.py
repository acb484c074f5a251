"""Multi-window temporal, node-level and graph-level contrastive losses.

Similarities are raw dot products. By default the positive pair is left
out of the softmax denominator; ``include_positive=True`` gives the usual
InfoNCE form. Log-sum-exp is computed with max subtraction throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import LossConfig
from .errors import ConfigError


def _contrast(logits: torch.Tensor, positive: torch.Tensor, include_positive: bool) -> torch.Tensor:
    """-log(exp(pos) / sum(exp(candidates))) for each row of ``logits``.

    ``positive`` is a boolean mask with exactly one True per row marking the
    positive column. Negatives are all other columns.
    """
    pos = logits.masked_fill(~positive, 0.0).sum(-1)
    denom = logits if include_positive else logits.masked_fill(positive, float("-inf"))
    return torch.logsumexp(denom, dim=-1) - pos


def mwtc_direction(pred: torch.Tensor, target: torch.Tensor, include_positive: bool = False) -> torch.Tensor:
    """Predicted future windows of one view vs all windows of the other view.

    pred: (..., N, k - kbar, d) for windows kbar+1..k. target: (..., N, k, d).
    Returns the mean over sensors and predicted windows, shape (...).
    """
    k, horizon = target.shape[-2], pred.shape[-2]
    if k < 2:
        raise ConfigError("no negatives for MWTC: need k >= 2 windows", "aug.window_len")
    if not 1 <= horizon < k:
        raise ConfigError(f"{horizon} predictions for k={k} windows", "model.kbar")
    logits = pred @ target.transpose(-1, -2)  # (..., N, horizon, k)
    kbar = k - horizon
    positive = torch.zeros(horizon, k, dtype=torch.bool, device=logits.device)
    positive[torch.arange(horizon), torch.arange(kbar, k)] = True
    return _contrast(logits, positive, include_positive).mean(dim=(-1, -2))


def mwtc_loss(pred_s, pred_w, win_w, win_s, include_positive: bool = False) -> torch.Tensor:
    """Strong-predicts-weak plus weak-predicts-strong; one value per sample."""
    return mwtc_direction(pred_s, win_w, include_positive) + mwtc_direction(pred_w, win_s, include_positive)


def nc_direction(anchor: torch.Tensor, other: torch.Tensor, tau: float, include_positive: bool = False):
    n = anchor.shape[-2]
    if n < 2:
        raise ConfigError("no negative sensors: need N >= 2", "N")
    logits = anchor @ other.transpose(-1, -2) / tau  # (..., N, N)
    positive = torch.eye(n, dtype=torch.bool, device=logits.device)
    return _contrast(logits, positive, include_positive).mean(dim=-1)


def nc_loss(ctx_w, ctx_s, tau: float, include_positive: bool = False) -> torch.Tensor:
    """Sensor i of one view against every sensor of the other view; contexts (..., N, d)."""
    return nc_direction(ctx_s, ctx_w, tau, include_positive) + nc_direction(ctx_w, ctx_s, tau, include_positive)


def gc_direction(anchor: torch.Tensor, other: torch.Tensor, tau: float, include_positive: bool = False):
    """Anchor g_p against g_p of the other view (positive) and both views of every other sample."""
    b = anchor.shape[0]
    if b < 2:
        raise ConfigError("GC needs at least 2 samples per batch", "train.batch_size")
    logits = torch.cat([anchor @ other.T, anchor @ anchor.T], dim=1) / tau  # (B, 2B)
    eye = torch.eye(b, dtype=torch.bool, device=logits.device)
    positive = torch.cat([eye, torch.zeros_like(eye)], dim=1)
    # the anchor itself is never a candidate
    logits = logits.masked_fill(torch.cat([torch.zeros_like(eye), eye], dim=1), float("-inf"))
    return _contrast(logits, positive, include_positive).mean()


def gc_loss(globals_w, globals_s, tau: float, include_positive: bool = False) -> torch.Tensor:
    """Batch-level loss over global features (B, N*d)."""
    return gc_direction(globals_s, globals_w, tau, include_positive) + gc_direction(
        globals_w, globals_s, tau, include_positive
    )


@dataclass
class LossBreakdown:
    mwtc: torch.Tensor
    nc: torch.Tensor
    gc: torch.Tensor
    total: torch.Tensor

    def item(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("mwtc", "nc", "gc", "total")}


def total_loss(trace_w, trace_s, cfg: LossConfig) -> LossBreakdown:
    """Weighted sum of the three objectives for a batch of weak/strong ForwardTraces.

    MWTC and NC are per-sample and reduced over the batch (mean, or sum when
    ``batch_mean`` is off); GC is computed once for the batch.
    """
    mwtc = mwtc_loss(trace_s.predictions, trace_w.predictions, trace_w.window_features,
                     trace_s.window_features, cfg.include_positive)
    nc = nc_loss(trace_w.contexts.contexts, trace_s.contexts.contexts, cfg.tau, cfg.include_positive)
    reduce = torch.mean if cfg.batch_mean else torch.sum
    mwtc, nc = reduce(mwtc), reduce(nc)
    gc = gc_loss(trace_w.globals, trace_s.globals, cfg.tau, cfg.include_positive)
    total = cfg.lambda_mwtc * mwtc + cfg.lambda_nc * nc + cfg.lambda_gc * gc
    return LossBreakdown(mwtc, nc, gc, total)
