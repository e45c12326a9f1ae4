"""Parameter layout, per-batch gradient sums and per-worker residual state.

All gradient quantities are float32, the precision they travel at on the wire.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError

DTYPE = np.float32
MAX_GROUP_SIZE = 1 << 28


@dataclass(frozen=True)
class ParameterGroup:
    """A contiguous slice of the flat parameter vector (one weight tensor)."""

    group_id: int
    size: int
    offset: int
    label: str = ""

    def __post_init__(self):
        if self.group_id < 0:
            raise ConfigurationError("must be non-negative", "group_id")
        if not 1 <= self.size <= MAX_GROUP_SIZE:
            raise ConfigurationError(
                f"{self.size} outside [1, 2^28]", "size")
        if self.offset < 0:
            raise ConfigurationError("must be non-negative", "offset")

    @property
    def stop(self) -> int:
        return self.offset + self.size

    def slice(self) -> slice:
        return slice(self.offset, self.stop)


def make_layout(sizes: Sequence[int], labels: Optional[Sequence[str]] = None) -> list[ParameterGroup]:
    """Build a tiling of ``sum(sizes)`` parameters, one group per entry."""
    labels = list(labels) if labels is not None else [f"group{i}" for i in range(len(sizes))]
    if len(labels) != len(sizes):
        raise ConfigurationError("labels and sizes differ in length")
    groups = []
    offset = 0
    for gid, (size, label) in enumerate(zip(sizes, labels)):
        groups.append(ParameterGroup(gid, int(size), offset, label))
        offset += int(size)
    return groups


def check_layout(groups: Sequence[ParameterGroup]) -> int:
    """Verify the groups tile ``[0, N)`` in order; returns N."""
    expected = 0
    for gid, g in enumerate(groups):
        if g.group_id != gid:
            raise ConfigurationError(f"group ids must be 0..{len(groups) - 1} in order", "group_id")
        if g.offset != expected:
            raise ConfigurationError(
                f"group {gid} starts at {g.offset}, expected {expected}", "offset")
        expected = g.stop
    return expected


def _float_array(x):
    """float32 unless the caller already holds float64 (oracle computations)."""
    arr = np.asarray(x)
    return arr if arr.dtype == np.float64 else arr.astype(DTYPE)


@dataclass
class BatchGradientSums:
    """``sum_mean[i] = sum_z g_zi / B`` and ``sum_sq_mean[i] = sum_z (g_zi / B)**2``."""

    sum_mean: np.ndarray
    sum_sq_mean: np.ndarray
    batch_size: int

    def __post_init__(self):
        self.sum_mean = _float_array(self.sum_mean)
        self.sum_sq_mean = _float_array(self.sum_sq_mean)
        if self.sum_mean.shape != self.sum_sq_mean.shape or self.sum_mean.ndim != 1:
            raise ConfigurationError("sum_mean and sum_sq_mean must be equal-length vectors")
        if self.batch_size < 1:
            raise ConfigurationError("must be >= 1", "batch_size")

    @property
    def size(self) -> int:
        return self.sum_mean.shape[0]


@dataclass
class GradientStats:
    """Residual ``r`` (delayed update) and accumulated squared sums ``v``."""

    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=DTYPE)
        self.v = np.asarray(self.v, dtype=DTYPE)
        if self.r.shape != self.v.shape or self.r.ndim != 1:
            raise ConfigurationError("r and v must be equal-length vectors")

    @classmethod
    def zeros(cls, n: int) -> "GradientStats":
        return cls(np.zeros(n, DTYPE), np.zeros(n, DTYPE))

    @property
    def size(self) -> int:
        return self.r.shape[0]

    def copy(self) -> "GradientStats":
        return GradientStats(self.r.copy(), self.v.copy())


@dataclass(frozen=True)
class GateConfig:
    """Hyperparameters of the variance gate.

    ``tau`` is only set for the hybrid codec; the basic gate rejects it.
    """

    alpha: float = 1.5
    zeta: float = 0.999
    tau: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"must be > 0, got {self.alpha}", "alpha")
        if not 0 < self.zeta <= 1:
            raise ConfigurationError(f"must be in (0, 1], got {self.zeta}", "zeta")
        if self.tau is not None and not self.tau > 0:
            raise ConfigurationError(f"must be > 0, got {self.tau}", "tau")


@dataclass
class SparseGradient:
    """Sorted global indexes and their float32 values."""

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, DTYPE))

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=DTYPE)
        if self.indices.shape != self.values.shape:
            raise ConfigurationError("indices and values differ in length")

    def __len__(self):
        return self.indices.shape[0]

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n, DTYPE)
        out[self.indices] = self.values
        return out


def accumulate(stats: GradientStats, sums: BatchGradientSums) -> GradientStats:
    if stats.size != sums.size:
        raise ConfigurationError(
            f"stats has {stats.size} parameters, sums has {sums.size}")
    return GradientStats(stats.r + sums.sum_mean, stats.v + sums.sum_sq_mean)


def per_sample_sums(per_sample_grads, batch_size: int, dtype=DTYPE) -> BatchGradientSums:
    """Reduce a ``(B, N)`` stack of per-sample gradients to the two running sums.

    The sample variance itself is never formed. A 1-D input is read as one
    parameter across samples, or as a single sample when ``batch_size == 1``.
    """
    grads = np.asarray(per_sample_grads, dtype=dtype)
    if grads.ndim == 1:
        grads = grads[None, :] if batch_size == 1 else grads[:, None]
    if batch_size < 1 or grads.shape[0] == 0:
        raise ConfigurationError("empty batch", "batch_size")
    if grads.shape[0] != batch_size:
        raise ConfigurationError(
            f"got {grads.shape[0]} per-sample gradients for batch_size={batch_size}",
            "batch_size")
    scaled = grads / grads.dtype.type(batch_size)
    return BatchGradientSums(scaled.sum(axis=0), (scaled * scaled).sum(axis=0), batch_size)
