"""MTS data model, the ``.gccd`` binary format, a labeled synthetic generator and batching.

File layout (little-endian)::

    b"GCCD" | u32 version=1 | u32 n | u32 N | u32 L | u32 c
    n*N*L float32, sample-major, sensor-major, time-minor
    n int32 labels (present iff c > 0)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"GCCD"
VERSION = 1
_HEADER = struct.Struct("<4s5I")


@dataclass(eq=False)
class MTSSample:
    values: np.ndarray  # (N sensors, L timestamps)
    label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ConfigError(f"expected a 2-D (N, L) array, got shape {self.values.shape}", "values")
        n_sensors, length = self.values.shape
        if n_sensors < 2:
            raise ConfigError(f"need at least 2 sensors, got {n_sensors}", "values")
        if length < 1:
            raise ConfigError("need at least 1 timestamp", "values")
        if not np.isfinite(self.values).all():
            raise ConfigError("contains non-finite values", "values")
        if self.label is not None:
            self.label = int(self.label)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, MTSSample):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.values, other.values)


@dataclass(eq=False)
class MTSDataset:
    samples: list[MTSSample]
    num_classes: int = 0
    split_tag: str = "train"
    _stack: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.split_tag not in ("train", "test"):
            raise ConfigError(f"must be 'train' or 'test', got {self.split_tag!r}", "split_tag")
        if self.num_classes < 0:
            raise ConfigError("must be >= 0", "num_classes")
        shapes = {s.shape for s in self.samples}
        if len(shapes) > 1:
            raise ConfigError(f"samples have differing shapes {sorted(shapes)}", "samples")
        for i, s in enumerate(self.samples):
            if self.num_classes == 0:
                continue
            if s.label is None:
                raise ConfigError(f"sample {i} is unlabeled in a labeled dataset", "samples")
            if not 0 <= s.label < self.num_classes:
                raise ConfigError(f"sample {i} label {s.label} outside [0, {self.num_classes})", "samples")

    @classmethod
    def from_arrays(cls, values, labels=None, num_classes=None, split_tag="train") -> "MTSDataset":
        values = np.asarray(values, dtype=np.float32)
        if labels is None:
            samples = [MTSSample(v) for v in values]
            num_classes = 0
        else:
            labels = np.asarray(labels)
            if num_classes is None:
                num_classes = int(labels.max()) + 1 if len(labels) else 0
            samples = [MTSSample(v, int(y)) for v, y in zip(values, labels)]
        return cls(samples, int(num_classes), split_tag)

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, MTSDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.split_tag == other.split_tag
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.samples, other.samples))
        )

    @property
    def shape(self) -> tuple[int, int]:
        """(N, L) shared by every sample."""
        if not self.samples:
            raise ConfigError("dataset is empty", "samples")
        return self.samples[0].shape

    @property
    def values(self) -> np.ndarray:
        """All samples stacked as an (n, N, L) float32 array."""
        if self._stack is None or len(self._stack) != len(self.samples):
            if self.samples:
                self._stack = np.stack([s.values for s in self.samples])
            else:
                self._stack = np.zeros((0, 0, 0), np.float32)
        return self._stack

    @property
    def labels(self) -> np.ndarray | None:
        if self.num_classes == 0:
            return None
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices, split_tag=None) -> "MTSDataset":
        return MTSDataset(
            [self.samples[i] for i in indices], self.num_classes, split_tag or self.split_tag
        )


def normalize_sensors(values: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Zero-mean, unit-variance per sensor of each sample over the time axis."""
    values = np.asarray(values, dtype=np.float32)
    mean = values.mean(axis=-1, keepdims=True)
    std = values.std(axis=-1, keepdims=True)
    return ((values - mean) / (std + eps)).astype(np.float32)


# --------------------------------------------------------------------------
# binary format


def save_dataset(ds: MTSDataset, path) -> None:
    n = len(ds)
    n_sensors, length = ds.shape if n else (0, 0)
    parts = [_HEADER.pack(MAGIC, VERSION, n, n_sensors, length, ds.num_classes)]
    parts.append(np.ascontiguousarray(ds.values, dtype="<f4").tobytes())
    if ds.num_classes > 0:
        parts.append(np.asarray(ds.labels, dtype="<i4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_dataset(path, split_tag: str | None = None) -> MTSDataset:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"truncated header: {len(blob)} of {_HEADER.size} bytes", len(blob))
    magic, version, n, n_sensors, length, num_classes = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    offset = _HEADER.size
    count = n * n_sensors * length
    end = offset + 4 * count
    if len(blob) < end:
        raise FormatError(f"truncated values: expected {end} bytes, file has {len(blob)}", len(blob))
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float32)
    values = values.reshape(n, n_sensors, length)
    labels = None
    if num_classes > 0:
        offset, end = end, end + 4 * n
        if len(blob) < end:
            raise FormatError(f"truncated labels: expected {end} bytes, file has {len(blob)}", len(blob))
        labels = np.frombuffer(blob, dtype="<i4", count=n, offset=offset)
        bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
        if bad.size:
            raise FormatError(f"label {labels[bad[0]]} outside [0, {num_classes})", offset + 4 * int(bad[0]))
    if len(blob) != end:
        raise FormatError(f"{len(blob) - end} trailing bytes", end)
    if split_tag is None:
        split_tag = path.stem if path.stem in ("train", "test") else "train"
    if n == 0:
        return MTSDataset([], num_classes, split_tag)
    return MTSDataset.from_arrays(values, labels, num_classes, split_tag)


def load_split_dir(directory) -> tuple[MTSDataset, MTSDataset]:
    directory = Path(directory)
    return load_dataset(directory / "train.gccd"), load_dataset(directory / "test.gccd")


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    n: int = 512
    N: int = 6
    L: int = 128
    num_classes: int = 2
    noise_std: float = 0.1
    seed: int = 0

    def validate(self):
        for name, low in (("n", 1), ("N", 2), ("L", 1), ("num_classes", 2)):
            if int(getattr(self, name)) < low:
                raise ConfigError(f"must be >= {low}, got {getattr(self, name)}", name)
        if not (self.noise_std >= 0 and np.isfinite(self.noise_std)):
            raise ConfigError(f"must be a finite real >= 0, got {self.noise_std}", "noise_std")
        return self


@dataclass
class ClassTable:
    """Per-class generative structure shared by every sample of a dataset."""

    freqs: np.ndarray  # (c, N) cycles per series
    shared: np.ndarray  # (c, N) bool, sensors carrying the class latent signal


def class_table(spec: SyntheticSpec) -> ClassTable:
    rng = np.random.default_rng([spec.seed, 0])
    c, n_sensors = spec.num_classes, spec.N
    top = max(c + 1, spec.L // 8)
    freqs = np.empty((c, n_sensors), dtype=np.float64)
    for i in range(n_sensors):
        # distinct frequencies per class on every sensor
        freqs[:, i] = rng.choice(np.arange(1, top + 1), size=c, replace=c > top)
    group = max(2, n_sensors // 2)
    shared = np.zeros((c, n_sensors), dtype=bool)
    seen: set[tuple[int, ...]] = set()
    for y in range(c):
        for _ in range(32):
            members = tuple(sorted(rng.choice(n_sensors, size=group, replace=False)))
            if members not in seen:
                break
        seen.add(members)
        shared[y, list(members)] = True
    return ClassTable(freqs, shared)


@dataclass
class LatentDraw:
    phases: np.ndarray  # (N,)
    signal: np.ndarray  # (L,) shared latent waveform
    texture: np.ndarray  # (N, L) class-free nuisance


TEXTURE_SCALE = 2.0


def draw_latent(rng: np.random.Generator, n_sensors: int, length: int) -> LatentDraw:
    phases = rng.uniform(0, 2 * np.pi, size=n_sensors)
    t = np.arange(length) / length
    signal = np.zeros(length)
    for _ in range(3):
        cycles = rng.uniform(0.5, max(1.0, length / 16))
        signal += rng.normal(0, 0.6) * np.sin(2 * np.pi * cycles * t + rng.uniform(0, 2 * np.pi))
    # fast tone per sensor, unrelated to the class; it dominates raw
    # amplitude, so useful features have to look past it
    fr = rng.uniform(length / 4, length / 2.5, size=n_sensors)
    ph = rng.uniform(0, 2 * np.pi, size=n_sensors)
    amp = TEXTURE_SCALE * rng.uniform(0.5, 1.5, size=n_sensors)
    texture = amp[:, None] * np.sin(2 * np.pi * fr[:, None] * t + ph[:, None])
    return LatentDraw(phases, signal, texture)


def render_sample(table: ClassTable, label: int, latent: LatentDraw, noise_std: float,
                  rng: np.random.Generator) -> np.ndarray:
    n_sensors, length = len(latent.phases), len(latent.signal)
    t = np.arange(length) / length
    x = np.sin(2 * np.pi * table.freqs[label][:, None] * t + latent.phases[:, None])
    x = x + table.shared[label][:, None] * latent.signal[None, :]
    x = x + latent.texture
    if noise_std > 0:
        x = x + rng.normal(0, noise_std, size=(n_sensors, length))
    return x.astype(np.float32)


def generate_synthetic(spec: SyntheticSpec, split_tag: str = "train") -> MTSDataset:
    """Labeled dataset where classes differ in per-sensor frequency and in which sensors co-vary."""
    spec.validate()
    table = class_table(spec)
    order_rng = np.random.default_rng([spec.seed, 1])
    labels = order_rng.permutation(np.arange(spec.n) % spec.num_classes)
    samples = []
    for j, y in enumerate(labels):
        rng = np.random.default_rng([spec.seed, 2, j])
        latent = draw_latent(rng, spec.N, spec.L)
        samples.append(MTSSample(render_sample(table, int(y), latent, spec.noise_std, rng), int(y)))
    return MTSDataset(samples, spec.num_classes, split_tag)


def train_test_split(ds: MTSDataset, seed: int, train_fraction: float = 0.8) -> tuple[MTSDataset, MTSDataset]:
    n_train = len(ds) - int(np.floor((1 - train_fraction) * len(ds) + 1e-9))
    perm = np.random.default_rng([seed, 3]).permutation(len(ds))
    return ds.subset(np.sort(perm[:n_train]), "train"), ds.subset(np.sort(perm[n_train:]), "test")


# --------------------------------------------------------------------------
# batching


def batch_iter(n: int | MTSDataset, batch_size: int, seed: int = 0, shuffle: bool = True,
               pretrain: bool = False) -> Iterator[np.ndarray]:
    """Yield index arrays. Pretraining drops the short tail batch; evaluation keeps it."""
    if isinstance(n, MTSDataset):
        n = len(n)
    if batch_size < 1:
        raise ConfigError("must be >= 1", "train.batch_size")
    if pretrain:
        if batch_size < 2:
            raise ConfigError("graph-level contrasting needs batches of at least 2", "train.batch_size")
        if n < batch_size:
            raise ConfigError(f"{n} samples give zero full batches of size {batch_size}", "train.batch_size")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    stop = (n // batch_size) * batch_size if pretrain else n
    for start in range(0, stop, batch_size):
        yield order[start:start + batch_size]
