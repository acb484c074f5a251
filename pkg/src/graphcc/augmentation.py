"""Weak/strong view construction for one MTS sample.

Order per sensor: wavelet-coefficient noising, windowing, then segment
permutation inside every window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AugmentationConfig
from .errors import ConfigError, ShapeError

SQRT2 = np.sqrt(2.0)
WEAK, STRONG = "weak", "strong"
_VIEW_ID = {WEAK: 0, STRONG: 1}


def dwt_haar(x):
    """Single-level Haar analysis along the last axis.

    Odd lengths are padded by repeating the last sample; ``idwt_haar``
    drops it again when given the original length.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    m = x.shape[-1]
    if m < 2:
        raise ShapeError(f"DWT needs at least 2 samples, got {m}")
    if m % 2:
        x = np.concatenate([x, x[..., -1:]], axis=-1)
    even, odd = x[..., 0::2], x[..., 1::2]
    return (even + odd) / SQRT2, (even - odd) / SQRT2


def idwt_haar(approx, detail, length: int):
    approx, detail = np.asarray(approx), np.asarray(detail)
    if approx.shape != detail.shape:
        raise ShapeError(f"coefficient shapes differ: {approx.shape} vs {detail.shape}")
    if length not in (2 * approx.shape[-1], 2 * approx.shape[-1] - 1):
        raise ShapeError(f"length {length} incompatible with {approx.shape[-1]} coefficient pairs")
    out = np.empty(approx.shape[:-1] + (2 * approx.shape[-1],), dtype=np.result_type(approx, detail))
    out[..., 0::2] = (approx + detail) / SQRT2
    out[..., 1::2] = (approx - detail) / SQRT2
    return out[..., :length]


def frequency_augment(x, view: str, cfg: AugmentationConfig, rng: np.random.Generator):
    """Noise the detail band (weak view) or the approximation band (strong view) of one signal.

    Noise std is ``noise_std_ratio`` times the std of the perturbed band, so a
    band that is identically zero stays untouched.
    """
    x = np.asarray(x)
    approx, detail = dwt_haar(x)
    if view == WEAK:
        band = detail
    elif view == STRONG:
        band = approx
    else:
        raise ConfigError(f"unknown view {view!r}", "view")
    scale = cfg.noise_std_ratio * band.std()
    if not scale > 0:
        return x.copy()
    band = band + rng.normal(0.0, scale, size=band.shape).astype(band.dtype)
    if view == WEAK:
        detail = band
    else:
        approx = band
    return idwt_haar(approx, detail, x.shape[-1]).astype(x.dtype)


def segment_windows(x, f: int):
    """(N, L) -> (N, floor(L/f), f); the tail that does not fill a window is dropped."""
    x = np.asarray(x)
    if f < 2:
        raise ConfigError(f"window length must be >= 2, got {f}", "aug.window_len")
    k = x.shape[-1] // f
    if k == 0:
        raise ShapeError(f"window longer than series: f={f} > L={x.shape[-1]}")
    return x[..., : k * f].reshape(x.shape[:-1] + (k, f))


def _piece_index(f: int, cut_mask: np.ndarray, slot: np.ndarray) -> np.ndarray:
    """Gather index that rearranges pieces of each length-f row.

    cut_mask (..., f-1): True where a new piece starts at position p+1.
    slot (..., f): destination slot of piece j (only the first m entries are used).
    """
    piece = np.concatenate([np.zeros(cut_mask.shape[:-1] + (1,), np.int64),
                            np.cumsum(cut_mask, axis=-1)], axis=-1)
    key = np.take_along_axis(slot, piece, axis=-1) * f + np.arange(f)
    return np.argsort(key, axis=-1)


def permute_window(w, max_segments: int, rng):
    """Split ``w`` into a random number (1..max_segments) of pieces and shuffle them.

    Draws, in order: the piece count m, m-1 distinct cut points, and a
    permutation of the pieces.
    """
    w = np.asarray(w)
    f = w.shape[-1]
    if not 1 <= max_segments <= f:
        raise ConfigError(f"max_segments={max_segments} outside [1, {f}]", "max_segments")
    if max_segments == 1:
        return w.copy()
    m = int(rng.integers(1, max_segments + 1))
    if m == 1:
        return w.copy()
    cuts = np.asarray(rng.choice(np.arange(1, f), size=m - 1, replace=False))
    order = np.asarray(rng.permutation(m))
    cut_mask = np.zeros(f - 1, dtype=bool)
    cut_mask[cuts - 1] = True
    slot = np.zeros(f, np.int64)
    slot[order] = np.arange(m)
    return w[_piece_index(f, cut_mask, slot)]


def permute_windows(windows, max_segments: int, rng: np.random.Generator):
    """``permute_window`` applied independently to every length-f row of ``windows``.

    Each row consumes a fixed slice of three draw blocks (piece count,
    cut-point keys, piece-order keys), so a row's result depends only on
    its own slice of the stream.
    """
    windows = np.asarray(windows)
    f = windows.shape[-1]
    if not 1 <= max_segments <= f:
        raise ConfigError(f"max_segments={max_segments} outside [1, {f}]", "max_segments")
    lead = windows.shape[:-1]
    u_count = rng.random(lead)
    cut_keys = rng.random(lead + (f - 1,))
    order_keys = rng.random(lead + (f,))
    if max_segments == 1:
        return windows.copy()
    m = np.minimum(1 + np.floor(u_count * max_segments).astype(np.int64), max_segments)
    # the m-1 smallest keys mark the cut points: a uniform (m-1)-subset of 1..f-1
    cut_rank = np.argsort(np.argsort(cut_keys, axis=-1), axis=-1)
    cut_mask = cut_rank < (m - 1)[..., None]
    # uniform permutation of the first m pieces
    live = np.arange(f) < m[..., None]
    slot = np.argsort(np.argsort(np.where(live, order_keys, np.inf), axis=-1), axis=-1)
    return np.take_along_axis(windows, _piece_index(f, cut_mask, slot), axis=-1)


@dataclass
class ViewPair:
    weak: np.ndarray  # (N, k, f)
    strong: np.ndarray  # (N, k, f)

    @property
    def k(self) -> int:
        return self.weak.shape[1]


def make_views(x, cfg: AugmentationConfig, seed: int, index: int = 0) -> ViewPair:
    """Both augmented views of one (N, L) sample.

    Each view draws from its own stream keyed on ``(seed, index, view)``;
    within it every sensor and every (sensor, window) owns a fixed slice of
    the draws, so results do not depend on evaluation order.
    """
    x = np.asarray(getattr(x, "values", x), dtype=np.float32)
    views = {}
    for view, max_segments in ((WEAK, cfg.max_segments_weak), (STRONG, cfg.max_segments_strong)):
        rng = np.random.default_rng([seed, index, _VIEW_ID[view]])
        signals = x
        if cfg.noise_std_ratio > 0:
            signals = np.stack([frequency_augment(row, view, cfg, sub)
                                for row, sub in zip(x, rng.spawn(len(x)))])
        windows = segment_windows(signals, cfg.window_len)
        views[view] = permute_windows(windows, max_segments, rng)
    return ViewPair(views[WEAK], views[STRONG])


def make_view_batch(values, cfg: AugmentationConfig, seed: int, indices) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (B, N, k, f) weak and strong views for a batch of samples."""
    pairs = [make_views(x, cfg, seed, int(j)) for x, j in zip(values, indices)]
    return np.stack([p.weak for p in pairs]), np.stack([p.strong for p in pairs])
