"""Workload description, FL global parameters, datasets and per-device shards."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from flsim.errors import ConfigError, ContractViolation
from flsim.models import LogisticBody, MlpBody

FLOPS_PER_PARAM_PER_SAMPLE = 6
BYTES_PER_PARAM = 4


class NnKind(enum.Enum):
    CNN_LIKE = "cnn_like"
    LSTM_LIKE = "lstm_like"
    MOBILENET_LIKE = "mobilenet_like"
    TOY_LOGISTIC = "toy_logistic"
    TOY_MLP = "toy_mlp"


@dataclass(frozen=True)
class NnDescriptor:
    kind: NnKind
    conv_layers: int
    fc_layers: int
    rc_layers: int
    flops_per_sample: float
    update_bytes: int
    trainable: LogisticBody | MlpBody

    def __post_init__(self):
        if min(self.conv_layers, self.fc_layers, self.rc_layers) < 0:
            raise ConfigError("layer counts must be >= 0")
        if self.flops_per_sample <= 0 or self.update_bytes <= 0:
            raise ConfigError("flops_per_sample and update_bytes must be positive")


# (conv, fc, rc, nominal params, nominal fwd+bwd FLOPs per sample) of the
# full-size models each stand-in imitates
_NOMINAL_SHAPES = {
    NnKind.CNN_LIKE: (2, 2, 0, 1_663_370, 74e6),
    NnKind.LSTM_LIKE: (0, 1, 2, 817_872, 3.9e8),
    NnKind.MOBILENET_LIKE: (28, 1, 0, 4_231_976, 3.4e9),
}


def describe_nn(kind, num_features: int = 64, num_classes: int = 10,
                hidden: tuple[int, ...] = (32,)) -> NnDescriptor:
    """Build the descriptor for ``kind``.

    Toy kinds derive cost from their own parameter count; the *_like kinds keep
    the layer mix and nominal cost of the full-size model while training a small
    MLP stand-in.
    """
    kind = NnKind(kind)
    if kind == NnKind.TOY_LOGISTIC:
        body = LogisticBody(num_features, num_classes)
        return NnDescriptor(kind, 0, 1, 0, FLOPS_PER_PARAM_PER_SAMPLE * body.n_params,
                            BYTES_PER_PARAM * body.n_params, body)
    if kind == NnKind.TOY_MLP:
        body = MlpBody(num_features, tuple(hidden), num_classes)
        return NnDescriptor(kind, 0, len(body.hidden) + 1, 0,
                            FLOPS_PER_PARAM_PER_SAMPLE * body.n_params,
                            BYTES_PER_PARAM * body.n_params, body)
    conv, fc, rc, params, flops = _NOMINAL_SHAPES[kind]
    body = MlpBody(num_features, tuple(hidden) or (32,), num_classes)
    return NnDescriptor(kind, conv, fc, rc, flops, BYTES_PER_PARAM * params, body)


@dataclass(frozen=True)
class GlobalParams:
    batch_size: int
    local_epochs: int
    participants: int
    fleet_size: int
    target_accuracy: float = 90.0
    max_rounds: int = 200
    local_lr: float = 0.05

    def __post_init__(self):
        if not 1 <= self.participants <= self.fleet_size:
            raise ConfigError(f"need 1 <= K <= N, got K={self.participants}, N={self.fleet_size}")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ConfigError("batch_size and local_epochs must be >= 1")
        if not 0 < self.target_accuracy <= 100:
            raise ConfigError("target_accuracy must be in (0, 100]")
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be >= 0")
        if not (math.isfinite(self.local_lr) and self.local_lr >= 0):
            raise ConfigError("local_lr must be finite and >= 0")


# Global parameter settings S1..S4 as (B, E, K)
SETTINGS = {
    "S1": (32, 10, 20),
    "S2": (32, 5, 20),
    "S3": (16, 5, 20),
    "S4": (16, 5, 10),
}


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> Dataset:
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


def make_gaussian_mixture(n_train: int, n_test: int, num_features: int = 64,
                          num_classes: int = 10, separation: float = 3.0,
                          noise: float = 1.0, seed: int = 0,
                          condition: float = 1.0) -> tuple[Dataset, Dataset]:
    """Balanced Gaussian clusters with class means at distance ``separation`` from 0.

    ``condition > 1`` rescales the feature axes geometrically from
    ``1/condition`` to 1 and applies a random rotation, so gradient descent
    needs many rounds instead of one step to reach the best linear boundary.
    """
    if n_train < 1 or n_test < 1:
        raise ConfigError("dataset sizes must be >= 1")
    if condition < 1.0:
        raise ConfigError("condition must be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, num_features))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    mix = None
    if condition != 1.0:
        rot, _ = np.linalg.qr(rng.normal(size=(num_features, num_features)))
        mix = np.geomspace(1.0 / condition, 1.0, num_features)[:, None] * rot

    def draw(n):
        y = rng.permutation(np.arange(n) % num_classes)
        X = means[y] + noise * rng.normal(size=(n, num_features))
        if mix is not None:
            X = X @ mix
        return Dataset(X, y.astype(np.int64), num_classes)

    return draw(n_train), draw(n_test)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = struct.unpack(">I", data[:4])[0]
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise ConfigError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(">" + "I" * ndim, data[4:4 + 4 * ndim])
    body = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise ConfigError(f"{path}: IDX payload size does not match header {dims}")
    return body.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError("IDX writer supports 1-d labels or 3-d images")
    header = struct.pack(">I" + "I" * array.ndim, magic, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_idx_dataset(images_path, labels_path, num_classes: int = 10) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConfigError("image and label counts differ")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), num_classes)


def write_csv_dataset(path, ds: Dataset) -> None:
    rows = np.column_stack([ds.y.astype(np.float64), ds.X])
    fmt = ["%d"] + ["%.17g"] * ds.X.shape[1]
    np.savetxt(path, rows, fmt=fmt, delimiter=",")


def read_csv_dataset(path, num_classes: int | None = None) -> Dataset:
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.size == 0:
        raise ConfigError(f"{path}: empty dataset")
    y = rows[:, 0].astype(np.int64)
    return Dataset(rows[:, 1:], y, num_classes or int(y.max()) + 1)


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataMode:
    """Fraction of devices holding non-IID data; 0.0 is the ideal IID split."""

    non_iid_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.non_iid_fraction <= 1.0:
            raise ConfigError("non_iid_fraction must be in [0, 1]")

    @property
    def is_iid(self) -> bool:
        return self.non_iid_fraction == 0.0


IID = DataMode(0.0)


def NonIID(fraction: float) -> DataMode:  # noqa: N802 - reads like the mode name
    return DataMode(fraction)


@dataclass(frozen=True)
class ShardSet:
    indices: tuple[np.ndarray, ...]
    histograms: np.ndarray  # devices x classes
    num_classes: int
    non_iid_devices: tuple[int, ...] = ()

    def __len__(self):
        return len(self.indices)

    def size(self, device: int) -> int:
        return len(self.indices[device])


def _deal(idx, devices, out, start):
    """Round-robin ``idx`` over ``devices`` starting at position ``start``."""
    n = len(devices)
    for j, sample in enumerate(idx):
        out[devices[(start + j) % n]].append(int(sample))
    return (start + len(idx)) % n


def partition_dataset(labels, fleet, mode: DataMode = IID, concentration: float = 0.1,
                      seed: int = 0) -> ShardSet:
    labels = np.asarray(getattr(labels, "y", labels))
    n_dev = fleet if isinstance(fleet, int) else len(fleet)
    if labels.size == 0:
        raise ConfigError("cannot partition an empty dataset")
    if n_dev < 1:
        raise ConfigError("need at least one device")
    if labels.size < n_dev:
        raise ContractViolation(f"{labels.size} samples cannot cover {n_dev} devices")
    if not concentration > 0:
        raise ConfigError("Dirichlet concentration must be positive")
    num_classes = int(labels.max()) + 1
    rng = np.random.default_rng(seed)

    n_non = math.ceil(round(mode.non_iid_fraction * n_dev, 9))
    non_iid = sorted(int(d) for d in rng.choice(n_dev, size=n_non, replace=False)) if n_non else []
    non_set = set(non_iid)
    iid_devs = [d for d in range(n_dev) if d not in non_set]

    shards: list[list[int]] = [[] for _ in range(n_dev)]
    start = 0
    for c in range(num_classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if not non_iid:
            iid_part, non_part = idx, idx[:0]
        elif not iid_devs:
            iid_part, non_part = idx[:0], idx
        else:
            n_iid = int(round(len(idx) * len(iid_devs) / n_dev))
            iid_part, non_part = idx[:n_iid], idx[n_iid:]
        if len(iid_part):
            start = _deal(iid_part, iid_devs, shards, start)
        if non_iid:
            props = rng.dirichlet(np.full(len(non_iid), concentration))
            cuts = (np.cumsum(props) * len(non_part)).astype(int)[:-1]
            for dev, part in zip(non_iid, np.split(non_part, cuts)):
                shards[dev].extend(int(s) for s in part)

    # no device may end up empty: borrow from the largest shard
    for d in range(n_dev):
        if not shards[d]:
            donor = max(range(n_dev), key=lambda k: (len(shards[k]), -k))
            shards[d].append(shards[donor].pop())

    indices = tuple(np.array(s, dtype=np.int64) for s in shards)
    hist = np.zeros((n_dev, num_classes), dtype=np.int64)
    for d, s in enumerate(indices):
        hist[d] = np.bincount(labels[s], minlength=num_classes)
    return ShardSet(indices, hist, num_classes, tuple(non_iid))


def classes_present(shards: ShardSet, device: int) -> int:
    return int(np.count_nonzero(shards.histograms[device]))
