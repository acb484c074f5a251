"""Learnable feature path: window CNN -> sensor graph + GNN -> per-sensor summarizer -> prediction heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .graph import augment_edges, build_graph, gnn_layer

PARAM_GROUPS = ("cnn", "W_g", "summarizer", "heads")


class ChannelNorm(nn.Module):
    """LayerNorm over the channel axis of a (batch, channels, time) tensor."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class WindowCNN(nn.Module):
    """Maps a batch of length-f windows (M, f) to (M, d); identical weights for every sensor."""

    def __init__(self, d, channels=(16, 32)):
        super().__init__()
        widths = (1, *channels, d)
        blocks = []
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            blocks += [
                nn.Conv1d(c_in, c_out, kernel_size=3, padding=1),
                ChannelNorm(c_out),
                nn.ReLU(),
                nn.MaxPool1d(2, ceil_mode=True),
            ]
        self.blocks = nn.Sequential(*blocks)
        self.proj = nn.Linear(d, d)

    def forward(self, windows):
        h = self.blocks(windows.unsqueeze(1))
        return self.proj(h.mean(dim=-1))


class SelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x):
        m, t, dim = x.shape
        q, k, v = self.qkv(x).view(m, t, 3, self.heads, dim // self.heads).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dim // self.heads), dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(m, t, dim))


class EncoderLayer(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ContextSummarizer(nn.Module):
    """Transformer over a sensor's past window tokens; the prepended context token's output is c_i.

    The output passes through a LayerNorm without affine parameters, which
    bounds the dot-product similarities used by the contrastive losses.
    """

    def __init__(self, dim, kbar, layers=2, heads=4):
        super().__init__()
        self.context = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos = nn.Parameter(torch.zeros(1, kbar + 1, dim))
        self.layers = nn.ModuleList(EncoderLayer(dim, heads) for _ in range(layers))
        self.final = nn.LayerNorm(dim, elementwise_affine=False)

    def forward(self, tokens):
        m = tokens.shape[0]
        x = torch.cat([self.context.expand(m, -1, -1), tokens], dim=1) + self.pos
        for layer in self.layers:
            x = layer(x)
        return self.final(x[:, 0])


@dataclass
class ContextSet:
    contexts: torch.Tensor  # (..., N, d)

    @property
    def global_(self) -> torch.Tensor:
        """Concatenation [c_1 | ... | c_N], shape (..., N*d)."""
        return self.contexts.flatten(-2)


@dataclass
class ForwardTrace:
    window_features: torch.Tensor  # (B, N, k, d) post-GNN
    contexts: ContextSet
    predictions: torch.Tensor  # (B, N, k - kbar, d)

    @property
    def globals(self) -> torch.Tensor:
        return self.contexts.global_


class GCCModel(nn.Module):
    def __init__(self, cfg: ModelConfig, num_windows: int, window_len: int, gnn_layers: int = 1):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.k = num_windows
        self.f = window_len
        self.kbar = cfg.resolve_kbar(num_windows)
        self.gnn_layers = gnn_layers
        d = cfg.d
        self.cnn = WindowCNN(d, tuple(cfg.cnn_channels))
        self.W_g = nn.Parameter(torch.empty(d, d))
        if cfg.summarizer == "transformer":
            self.summarizer = ContextSummarizer(d, self.kbar, cfg.transformer_layers, cfg.transformer_heads)
        else:
            self.summarizer = None
        self.heads = nn.ModuleList(nn.Linear(d, d) for _ in range(num_windows - self.kbar))

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups = {g: [] for g in PARAM_GROUPS}
        for name, p in self.named_parameters():
            groups[name.split(".")[0]].append((name, p))
        return {g: ps for g, ps in groups.items() if ps}

    def encode_windows(self, views: torch.Tensor) -> torch.Tensor:
        """(..., N, k, f) -> (..., N, k, d)."""
        if views.shape[-1] != self.f:
            raise ShapeError(f"window length {views.shape[-1]} != configured {self.f}")
        lead = views.shape[:-1]
        return self.cnn(views.reshape(-1, self.f)).reshape(*lead, self.cfg.d)

    def summarize(self, z: torch.Tensor) -> torch.Tensor:
        """(B, N, k, d) -> contexts (B, N, d) from the first kbar windows of each sensor."""
        past = z[..., : self.kbar, :]
        if self.summarizer is None:
            return past.mean(dim=-2)
        lead = past.shape[:-2]
        return self.summarizer(past.reshape(-1, self.kbar, self.cfg.d)).reshape(*lead, self.cfg.d)

    def predict(self, contexts: torch.Tensor) -> torch.Tensor:
        preds = [head(contexts) for head in self.heads]
        if self.cfg.nonlinear_heads:
            preds = [torch.relu(p) for p in preds]
        return torch.stack(preds, dim=-2)

    def forward(self, views, edge_s: int, generator: torch.Generator | None = None) -> ForwardTrace:
        return forward_view(self, views, edge_s, generator)


def forward_view(model: GCCModel, views: torch.Tensor, edge_s: int,
                 generator: torch.Generator | None = None) -> ForwardTrace:
    """Run one view (B, N, k, f) or (N, k, f) through the whole feature path."""
    squeeze = views.dim() == 3
    if squeeze:
        views = views.unsqueeze(0)
    if views.dim() != 4:
        raise ShapeError(f"expected (B, N, k, f) views, got {tuple(views.shape)}")
    b, n, k, f = views.shape
    if k != model.k:
        raise ConfigError(f"view has k={k} windows, model expects {model.k}", "aug.window_len")
    if model.kbar >= k:
        raise ConfigError("nothing to predict", "model.kbar")
    z = model.encode_windows(views)  # (B, N, k, d)
    if model.gnn_layers > 0:
        zt = z.transpose(1, 2)  # (B, k, N, d): one graph per window
        graph = augment_edges(build_graph(zt), edge_s, generator)
        h = zt
        for _ in range(model.gnn_layers):
            h = gnn_layer(type(graph)(h, graph.edges), model.W_g)
        z = h.transpose(1, 2)
    contexts = model.summarize(z)
    preds = model.predict(contexts)
    trace = ForwardTrace(z, ContextSet(contexts), preds)
    if squeeze:
        trace = ForwardTrace(z[0], ContextSet(contexts[0]), preds[0])
    return trace


def init_params(model: GCCModel, seed: int) -> GCCModel:
    """Deterministic init: affine/conv weights U(+-sqrt(3/fan_in)), biases 0, norms at identity."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "bias":
                p.zero_()
            elif "norm" in name:
                p.fill_(1.0)
            elif name == "W_g":
                bound = math.sqrt(3.0 / p.shape[0])
                p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)
            elif name.endswith("context") or name.endswith("pos"):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)
            else:
                fan_in = p[0].numel()
                bound = math.sqrt(3.0 / fan_in)
                p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)
    return model


def build_model(cfg, num_windows: int, seed: int | None = None, dtype=torch.float32) -> GCCModel:
    """Model from a TrainConfig, initialized from ``seed`` (defaults to ``cfg.seed``)."""
    model = GCCModel(cfg.model, num_windows, cfg.aug.window_len, cfg.graph.gnn_layers)
    init_params(model, cfg.seed if seed is None else seed)
    return model.to(dtype)
