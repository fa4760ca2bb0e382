"""Local training core: flat-parameter models, SGD, evaluation and datasets.

Models are addressed only through a flat float64 parameter vector so that
compression, aggregation and Krum can treat every model family the same way.

Parameter layout
----------------
softmax_regression : ``W (F x C)`` row-major, then ``b (C)``
mlp_one_hidden     : ``W1 (F x H)``, ``b1 (H)``, ``W2 (H x C)``, ``b2 (C)``
                     with a tanh hidden layer
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path

import numpy as np

DEFAULT_HIDDEN = 16


class ModelKind(str, Enum):
    SOFTMAX_REGRESSION = "softmax_regression"
    MLP_ONE_HIDDEN = "mlp_one_hidden"


class TrainingDiverged(FloatingPointError):
    """Raised when local training produces a non-finite loss or gradient."""


class DatasetFormatError(ValueError):
    """Raised for malformed IDX/CSV input."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError("labels must be 1-D with one entry per sample")
        if x.shape[0] < 1:
            raise ValueError("dataset must hold at least one sample")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if y.min() < 0 or y.max() >= self.classes:
            raise ValueError(f"labels outside [0, {self.classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.classes)


@dataclass(frozen=True)
class LearnerConfig:
    learning_rate: float = 0.01
    decay: float = 0.99
    batch_size: int = 32
    local_epochs: int = 5
    model_kind: ModelKind = ModelKind.SOFTMAX_REGRESSION
    hidden: int = DEFAULT_HIDDEN

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.batch_size < 1 or self.local_epochs < 1 or self.hidden < 1:
            raise ValueError("batch_size, local_epochs and hidden must be >= 1")

    def rate(self, round_idx: int) -> float:
        return self.learning_rate * self.decay ** round_idx


# ----------------------------------------------------------------------------
# models


def param_count(input_dim: int, classes: int, model_kind=ModelKind.SOFTMAX_REGRESSION,
                hidden: int = DEFAULT_HIDDEN) -> int:
    if ModelKind(model_kind) is ModelKind.SOFTMAX_REGRESSION:
        return input_dim * classes + classes
    return input_dim * hidden + hidden + hidden * classes + classes


def init_model(seed: int, input_dim: int, classes: int,
               model_kind=ModelKind.SOFTMAX_REGRESSION,
               hidden: int = DEFAULT_HIDDEN) -> np.ndarray:
    """Deterministic initial parameters for the given architecture."""
    if input_dim < 1 or classes < 2 or hidden < 1:
        raise ValueError("input_dim >= 1, classes >= 2 and hidden >= 1 required")
    rng = np.random.default_rng(seed)
    kind = ModelKind(model_kind)
    if kind is ModelKind.SOFTMAX_REGRESSION:
        w = rng.normal(0.0, 0.01, size=input_dim * classes)
        return np.concatenate([w, np.zeros(classes)])
    w1 = rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=input_dim * hidden)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden * classes)
    return np.concatenate([w1, np.zeros(hidden), w2, np.zeros(classes)])


def _infer_hidden(p: int, f: int, c: int) -> int:
    # p = f*h + h + h*c + c
    h, rem = divmod(p - c, f + 1 + c)
    if rem or h < 1:
        raise ValueError(f"parameter count {p} does not fit an MLP with F={f}, C={c}")
    return h


def _kind_for(w: np.ndarray, f: int, c: int) -> ModelKind:
    if w.shape[0] == f * c + c:
        return ModelKind.SOFTMAX_REGRESSION
    _infer_hidden(w.shape[0], f, c)
    return ModelKind.MLP_ONE_HIDDEN


def _unpack_mlp(w, f, c):
    h = _infer_hidden(w.shape[0], f, c)
    i = 0
    w1 = w[i:i + f * h].reshape(f, h); i += f * h
    b1 = w[i:i + h]; i += h
    w2 = w[i:i + h * c].reshape(h, c); i += h * c
    b2 = w[i:i + c]
    return w1, b1, w2, b2


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logits(w: np.ndarray, x: np.ndarray, classes: int) -> np.ndarray:
    f = x.shape[1]
    if _kind_for(w, f, classes) is ModelKind.SOFTMAX_REGRESSION:
        return x @ w[:f * classes].reshape(f, classes) + w[f * classes:]
    w1, b1, w2, b2 = _unpack_mlp(w, f, classes)
    return np.tanh(x @ w1 + b1) @ w2 + b2


def loss_and_grad(w: np.ndarray, x: np.ndarray, y: np.ndarray, classes: int):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``w``."""
    b, f = x.shape
    onehot = np.zeros((b, classes))
    onehot[np.arange(b), y] = 1.0
    if _kind_for(w, f, classes) is ModelKind.SOFTMAX_REGRESSION:
        z = x @ w[:f * classes].reshape(f, classes) + w[f * classes:]
        p = _softmax(z)
        loss = -np.mean(np.log(p[np.arange(b), y]))
        dz = (p - onehot) / b
        return loss, np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)])
    w1, b1, w2, b2 = _unpack_mlp(w, f, classes)
    a = np.tanh(x @ w1 + b1)
    p = _softmax(a @ w2 + b2)
    loss = -np.mean(np.log(p[np.arange(b), y]))
    dz = (p - onehot) / b
    da = (dz @ w2.T) * (1.0 - a * a)
    grad = np.concatenate([(x.T @ da).ravel(), da.sum(axis=0),
                           (a.T @ dz).ravel(), dz.sum(axis=0)])
    return loss, grad


def dataset_loss(w: np.ndarray, data: Dataset) -> float:
    return loss_and_grad(w, data.features, data.labels, data.classes)[0]


def local_train(w: np.ndarray, data: Dataset, cfg: LearnerConfig, round_idx: int,
                rng_seed: int) -> np.ndarray:
    """Mini-batch SGD for ``cfg.local_epochs`` passes, reshuffling each epoch."""
    w = np.array(w, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(w)):
        raise TrainingDiverged("initial parameters are not finite")
    rate = cfg.rate(round_idx)
    if rate == 0.0:
        return w
    rng = np.random.default_rng(rng_seed)
    n = len(data)
    for epoch in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grad = loss_and_grad(w, data.features[idx], data.labels[idx], data.classes)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(
                    f"non-finite loss/gradient at round {round_idx}, epoch {epoch}, "
                    f"batch offset {start} (loss={loss})")
            w -= rate * grad
    return w


def compute_update(w_new: np.ndarray, w_old: np.ndarray) -> np.ndarray:
    w_new, w_old = np.asarray(w_new), np.asarray(w_old)
    if w_new.shape != w_old.shape:
        raise ValueError(f"length mismatch: {w_new.shape} vs {w_old.shape}")
    return w_new - w_old


def apply_update(w: np.ndarray, d: np.ndarray) -> np.ndarray:
    w, d = np.asarray(w), np.asarray(d)
    if w.shape != d.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {d.shape}")
    return w + d


def predict(w: np.ndarray, x: np.ndarray, classes: int) -> np.ndarray:
    return np.argmax(logits(w, x, classes), axis=1)


def evaluate(w: np.ndarray, data: Dataset) -> float:
    """Fraction of samples classified correctly."""
    return float(np.mean(predict(w, data.features, data.classes) == data.labels))


# ----------------------------------------------------------------------------
# data


def make_synthetic_dataset(seed: int, classes: int = 10, per_class: int = 100,
                           dim: int = 20, spread: float = 1.0,
                           separation: float = 1.0) -> Dataset:
    """Gaussian blobs: one N(0, separation^2 I) mean per class, isotropic noise."""
    if classes < 2 or per_class < 1 or dim < 1 or spread < 0 or separation <= 0:
        raise ValueError("invalid synthetic dataset parameters")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, separation, size=(classes, dim))
    labels = np.repeat(np.arange(classes), per_class)
    x = means[labels] + spread * rng.normal(size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(x[order], labels[order], classes)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DatasetFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise DatasetFormatError(
            f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, classes: int = 10, scale: float = 255.0) -> Dataset:
    """Read an MNIST-style IDX pair (unsigned-byte images and labels, optionally gzipped)."""
    images = _read_idx(images_path, 0x00000803)
    labels = _read_idx(labels_path, 0x00000801).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError("image and label counts differ")
    if labels.size and (labels.max() >= classes):
        raise DatasetFormatError(f"label {labels.max()} out of range for {classes} classes")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / scale
    return Dataset(x, labels, classes)


def load_csv(path, classes: int | None = None, scale: float = 255.0) -> Dataset:
    """Read a header CSV whose ``label`` column holds class ids; other columns are features."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if "label" not in header:
            raise DatasetFormatError(f"{path}: no 'label' column")
        li = header.index("label")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    table = np.array(rows)
    labels = table[:, li]
    if np.any(labels != np.round(labels)) or labels.min() < 0:
        raise DatasetFormatError(f"{path}: labels must be nonnegative integers")
    labels = labels.astype(np.int64)
    classes = int(labels.max()) + 1 if classes is None else classes
    if labels.max() >= classes:
        raise DatasetFormatError(f"{path}: label {labels.max()} out of range for {classes} classes")
    x = np.delete(table, li, axis=1) / scale
    return Dataset(x, labels, max(classes, 2))


def partition(data: Dataset, n_parts: int, seed: int) -> list[Dataset]:
    """Random disjoint parts whose sizes differ by at most one."""
    if n_parts < 1 or n_parts > len(data):
        raise ValueError(f"cannot split {len(data)} samples into {n_parts} parts")
    order = np.random.default_rng(seed).permutation(len(data))
    return [data.take(chunk) for chunk in np.array_split(order, n_parts)]


def round_half_up(x) -> int:
    """Round-half-up on the decimal form of ``x`` (so 0.5-boundaries survive float noise)."""
    if not isinstance(x, Decimal):
        x = Decimal(repr(x))
    return int(x.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def eval_subset(data: Dataset, fraction: float, seed: int) -> Dataset:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    size = round_half_up(Decimal(repr(fraction)) * len(data))
    if size < 1:
        raise ValueError("evaluation subset would be empty")
    return sample_subset(data, size, seed)


def sample_subset(data: Dataset, size: int, seed: int) -> Dataset:
    if not 1 <= size <= len(data):
        raise ValueError(f"subset size {size} outside [1, {len(data)}]")
    if size == len(data):
        return data
    idx = np.sort(np.random.default_rng(seed).choice(len(data), size=size, replace=False))
    return data.take(idx)


def split_holdout(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Reserve ``round(fraction * N)`` samples as a test set; returns (train, test)."""
    n_test = round_half_up(Decimal(repr(fraction)) * len(data))
    if not 1 <= n_test < len(data):
        raise ValueError("holdout fraction leaves an empty train or test set")
    order = np.random.default_rng(seed).permutation(len(data))
    return data.take(np.sort(order[n_test:])), data.take(np.sort(order[:n_test]))
