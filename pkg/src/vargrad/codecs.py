"""Threshold (sign-only) codecs: Strom's method and its variance-gated hybrid."""
from __future__ import annotations

import numpy as np

from .core import (DTYPE, BatchGradientSums, GateConfig, GradientStats,
                   SparseGradient, accumulate)
from .errors import ConfigurationError
from .gate import should_send


def strom_step(residual, sums: BatchGradientSums, tau: float):
    """Emit ``sign(r) * tau`` wherever ``|r| > tau`` and keep the remainder.

    At most one sign per parameter per step; larger residuals drain over
    several steps. Returns ``(send_set, new_residual)``.
    """
    if not tau > 0:
        raise ConfigurationError(f"must be > 0, got {tau}", "tau")
    r = np.asarray(residual, DTYPE)
    if r.shape != sums.sum_mean.shape:
        raise ConfigurationError(f"residual has {r.size} parameters, sums has {sums.size}")
    r = (r + sums.sum_mean).astype(DTYPE)
    t = DTYPE(tau)
    idx = np.flatnonzero(np.abs(r) > t)
    sent = np.where(r[idx] > 0, t, -t).astype(DTYPE)
    r[idx] -= sent
    return SparseGradient(idx, sent), r


def hybrid_step(stats: GradientStats, sums: BatchGradientSums, cfg: GateConfig):
    """Strom's threshold test conjoined with the variance gate.

    After a send the residual drops by ``tau`` and the squared sums are
    corrected to ``max(v - 2|r|tau + tau**2, 0)`` using the already reduced
    ``r``. Decay by ``zeta`` then applies to every parameter, sent or not.
    """
    if cfg.tau is None:
        raise ConfigurationError("hybrid codec requires a threshold", "tau")
    t = DTYPE(cfg.tau)
    acc = accumulate(stats, sums)
    r, v = acc.r, acc.v
    mask = (np.abs(r) > t) & should_send(r, v, DTYPE(cfg.alpha))
    idx = np.flatnonzero(mask)
    sent = np.where(r[idx] > 0, t, -t).astype(DTYPE)
    r[idx] -= sent
    v[idx] = np.maximum(v[idx] - DTYPE(2) * np.abs(r[idx]) * t + t * t, DTYPE(0))
    v *= DTYPE(cfg.zeta)
    return SparseGradient(idx, sent), GradientStats(r, v)
