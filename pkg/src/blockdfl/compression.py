"""Top-k sparsification with locally accumulated residuals."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .learner import round_half_up

# (start_round, sparsity) steps
MNIST_SCHEDULE = ((0, 0.90), (50, 0.925), (100, 0.95), (150, 0.975))
CIFAR_SCHEDULE = ((0, 0.85), (60, 0.875), (120, 0.90), (180, 0.925), (240, 0.95))


@dataclass(frozen=True, eq=False)
class SparseUpdate:
    dim: int
    indices: np.ndarray
    values: np.ndarray
    sparsity: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be 1-D of equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing and inside [0, dim)")
            if not np.all(np.isfinite(val)) or np.any(val == 0):
                raise ValueError("values must be finite and nonzero")
        if not 0 <= self.sparsity < 1:
            raise ValueError("sparsity must lie in [0, 1)")
        if idx.size > support_size(self.dim, self.sparsity):
            raise ValueError("support exceeds the declared sparsity")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def __eq__(self, other):
        if not isinstance(other, SparseUpdate):
            return NotImplemented
        return (self.dim == other.dim and self.sparsity == other.sparsity
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash(self.to_bytes())

    @classmethod
    def from_dense(cls, d: np.ndarray) -> SparseUpdate:
        """Uncompressed transmission: every nonzero entry, declared sparsity 0."""
        d = np.asarray(d, dtype=np.float64)
        idx = np.flatnonzero(d)
        return cls(d.shape[0], idx, d[idx], 0.0)

    def to_bytes(self) -> bytes:
        return b"".join([
            struct.pack(">q", self.dim),
            struct.pack(">q", self.indices.size), self.indices.astype(">i8").tobytes(),
            struct.pack(">q", self.values.size), self.values.astype(">f8").tobytes(),
            struct.pack(">d", self.sparsity),
        ])


def support_size(dim: int, sparsity: float) -> int:
    """k = round_half_up((1 - s) * P), computed in decimal arithmetic."""
    return round_half_up((1 - Decimal(repr(float(sparsity)))) * dim)


def top_k_sparsify(d: np.ndarray, sparsity: float) -> tuple[SparseUpdate, np.ndarray]:
    """Keep the k largest-magnitude entries; return (sparse, residual).

    Ties at the k-th magnitude keep the lower index. Exact zeros among the
    top k are not transmitted, so the support can be smaller than k only
    when ``d`` has fewer than k nonzero entries.
    """
    d = np.asarray(d, dtype=np.float64)
    if not 0 <= sparsity < 1:
        raise ValueError("sparsity must lie in [0, 1)")
    if not np.all(np.isfinite(d)):
        raise ValueError("update contains non-finite entries")
    k = support_size(d.shape[0], sparsity)
    if k == 0:
        raise ValueError(f"sparsity {sparsity} leaves no entries of a {d.shape[0]}-vector")
    order = np.argsort(-np.abs(d), kind="stable")
    keep = np.sort(order[:k])
    keep = keep[d[keep] != 0]
    residual = d.copy()
    residual[keep] = 0.0
    return SparseUpdate(d.shape[0], keep, d[keep], float(sparsity)), residual


def densify(u: SparseUpdate) -> np.ndarray:
    out = np.zeros(u.dim)
    out[u.indices] = u.values
    return out


def accumulate(residual: np.ndarray, d_new: np.ndarray) -> np.ndarray:
    residual, d_new = np.asarray(residual), np.asarray(d_new)
    if residual.shape != d_new.shape:
        raise ValueError(f"length mismatch: {residual.shape} vs {d_new.shape}")
    return residual + d_new


def sparsity_for_round(round_idx: int, schedule) -> float:
    """Step function over ``(start_round, sparsity)`` pairs sorted by start."""
    if not schedule:
        raise ValueError("empty sparsity schedule")
    current = schedule[0][1]
    for start, s in schedule:
        if start <= round_idx:
            current = s
        else:
            break
    return float(current)


def stepped_schedule(levels, period: int):
    """``levels[i]`` applies from round ``i * period`` on."""
    return tuple((i * period, float(s)) for i, s in enumerate(levels))
