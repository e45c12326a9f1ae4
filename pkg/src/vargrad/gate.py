"""Variance gate: delay ambiguous gradient elements until their sign is clear.

A parameter is sent once its accumulated residual dominates the accumulated
squared per-sample contributions, ``r**2 > alpha * v``. Unsent elements keep
accumulating; their squared sums decay by ``zeta`` every step so a parameter
that was once noisy is not blocked forever.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import (BatchGradientSums, GateConfig, GradientStats, SparseGradient,
                   accumulate)
from .errors import ConfigurationError, DomainError


def should_send(r, v, alpha):
    """Strict test ``r**2 > alpha * v``; ties delay. Works on scalars or arrays."""
    return r * r > alpha * v


def gate_step(stats: GradientStats, sums: BatchGradientSums, cfg: GateConfig):
    """One step of the basic algorithm for every parameter.

    Returns ``(send_set, new_stats)``. Sent values are the accumulated residual,
    i.e. the sum over all delayed steps rather than their mean. Sent entries
    reset ``r`` and ``v`` to zero; the others have ``v`` decayed by ``zeta``.
    """
    if cfg.tau is not None:
        raise ConfigurationError("basic gate takes no threshold; use codecs.hybrid_step", "tau")
    acc = accumulate(stats, sums)
    mask = should_send(acc.r, acc.v, np.float32(cfg.alpha))
    idx = np.flatnonzero(mask)
    send = SparseGradient(idx, acc.r[idx])
    r = np.where(mask, np.float32(0), acc.r)
    v = np.where(mask, np.float32(0), acc.v * np.float32(cfg.zeta))
    return send, GradientStats(r, v)


def equivalent_alpha_prime(alpha: float, batch_size: int) -> float:
    """Variance-form strictness matching the sums-form ``alpha``.

    ``(sum g/B)**2 > alpha * sum (g/B)**2`` holds exactly when
    ``mean**2 > alpha' * var / B`` with ``alpha' = alpha (B-1) / (B-alpha)``.
    """
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if alpha >= batch_size:
        raise DomainError(f"alpha={alpha} must be below batch_size={batch_size}")
    return alpha * (batch_size - 1) / (batch_size - alpha)


def criterion_via_variance(sample_grads: Sequence[float], alpha, exact: bool = False) -> bool:
    """Evaluate the send test through the explicit sample variance.

    Test oracle for :func:`should_send`. With ``exact=True`` the computation is
    carried out in rational arithmetic (``alpha`` may then be a Fraction).
    """
    n = len(sample_grads)
    if n < 2:
        raise DomainError("sample variance needs at least two samples")
    if exact:
        xs = [Fraction(x) for x in sample_grads]
        a = Fraction(alpha)
        mean = sum(xs) / n
        var = sum((x - mean) ** 2 for x in xs) / (n - 1)
        if a <= 0 or a >= n:
            raise DomainError(f"alpha={alpha} must be in (0, {n})")
        a_prime = a * (n - 1) / (n - a)
        return a_prime / n * var < mean * mean
    xs = np.asarray(sample_grads, dtype=np.float64)
    mean = xs.mean()
    var = xs.var(ddof=1)
    a_prime = equivalent_alpha_prime(float(alpha), n)
    return bool(a_prime / n * var < mean * mean)
