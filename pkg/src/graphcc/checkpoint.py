"""``.gcck`` checkpoint container.

Layout (little-endian)::

    b"GCCK" | u32 version=1 | u32 header_len | header (UTF-8 JSON) | raw parameter bytes

The JSON header holds the config echo, data shape metadata, the loss
history and an index of named arrays (dtype, shape, byte offset into the
payload).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, from_flat
from .errors import FormatError

MAGIC = b"GCCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass(eq=False)
class Checkpoint:
    config: TrainConfig
    state: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)  # num_sensors, length, num_windows
    history: list[dict] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.config.flat() == other.config.flat()
            and self.meta == other.meta
            and self.history == other.history
            and self.state.keys() == other.state.keys()
            and all(
                self.state[k].dtype == other.state[k].dtype and np.array_equal(self.state[k], other.state[k])
                for k in self.state
            )
        )

    @classmethod
    def from_model(cls, model, config: TrainConfig, meta: dict, history=None) -> "Checkpoint":
        state = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(config.copy(), state, dict(meta), list(history or []))

    def model(self, dtype=None):
        from .encoder import GCCModel

        cfg = self.config
        model = GCCModel(cfg.model, self.meta["num_windows"], cfg.aug.window_len, cfg.graph.gnn_layers)
        first = next(iter(self.state.values()))
        model.to(torch.float64 if first.dtype == np.float64 else torch.float32)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.state.items()})
        if dtype is not None:
            model.to(dtype)
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    index, chunks, offset = [], [], 0
    for name, arr in ckpt.state.items():
        arr = np.ascontiguousarray(arr)
        blob = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        index.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    header = json.dumps({
        "config": ckpt.config.flat(),
        "meta": ckpt.meta,
        "history": ckpt.history,
        "params": index,
    }, sort_keys=True).encode()
    Path(path).write_bytes(_PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise FormatError("truncated checkpoint header", len(blob))
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    start = _PREFIX.size + header_len
    if len(blob) < start:
        raise FormatError("truncated checkpoint header", len(blob))
    try:
        header = json.loads(blob[_PREFIX.size:start])
    except ValueError:
        raise FormatError("checkpoint header is not valid JSON", _PREFIX.size) from None
    state = {}
    for entry in header["params"]:
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(blob):
            raise FormatError(f"truncated array {entry['name']!r}", len(blob))
        dtype = np.dtype("<" + entry["dtype"])
        state[entry["name"]] = np.frombuffer(blob[lo:hi], dtype=dtype).reshape(entry["shape"]).astype(
            dtype.newbyteorder("="))
    return Checkpoint(from_flat(header["config"]), state, header["meta"], header["history"])
