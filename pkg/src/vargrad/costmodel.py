"""Bandwidth-only communication model: ring allreduce vs pipelined ring allgatherv.

Latency terms are ignored throughout; at the message sizes of interest the
bandwidth term dominates.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError


@dataclass(frozen=True)
class CostModelInputs:
    p: int             # nodes
    N: int             # parameters
    s: float = 32      # bits per parameter
    beta: float = 1.0  # seconds per bit
    m: float = 0.0     # pipeline block size, bits
    c: float = 1.0     # average compression ratio

    def __post_init__(self):
        for name in ("p", "N", "s", "beta"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.m < 0:
            raise DomainError("m must be non-negative")


def ring_allreduce_time(inp: CostModelInputs) -> float:
    """``2 (p-1) N s beta / p``."""
    if inp.p < 2:
        raise DomainError("ring allreduce needs p >= 2")
    return 2 * (inp.p - 1) * inp.N * inp.s * inp.beta / inp.p


def allgatherv_time_bound(inp: CostModelInputs) -> float:
    """Upper bound ``(N s p / c + (p-1) m) beta`` for the pipelined ring allgatherv."""
    if not inp.c > 0:
        raise DomainError("compression ratio must be positive")
    return (inp.N * inp.s * inp.p / inp.c + (inp.p - 1) * inp.m) * inp.beta


def allgatherv_time_measured(total_bits: float, p: int, beta: float, m: float = 0.0) -> float:
    """Same bound from a measured payload total ``sum n_i`` in bits."""
    return (total_bits + (p - 1) * m) * beta


def speedup_lower_bound(p: int, c: float) -> float:
    """``2 (p-1) c / p**2``; exceeds 1 once ``c > p**2 / (2 (p-1))``, roughly ``p/2``."""
    if p < 2:
        raise DomainError("speedup is defined for p >= 2")
    if not c > 0:
        raise DomainError("compression ratio must be positive")
    return 2 * (p - 1) * c / p ** 2


def break_even_ratio(p: int) -> float:
    """Compression ratio at which the speedup bound equals one."""
    if p < 2:
        raise DomainError("speedup is defined for p >= 2")
    return p ** 2 / (2 * (p - 1))


def predicted_speedup(p: int, N: int, s: float, total_bits: float, m: float = 0.0) -> float:
    """Ratio of the allreduce time to the allgatherv bound for measured traffic.

    ``beta`` cancels, so only sizes are needed.
    """
    tr = ring_allreduce_time(CostModelInputs(p=p, N=N, s=s))
    return tr / allgatherv_time_measured(total_bits, p, 1.0, m)


def sweep(p_values, c_values, N: int, s: float = 32, beta: float = 1e-9, m: float = 0.0) -> list[dict]:
    rows = []
    for p in p_values:
        for c in c_values:
            inp = CostModelInputs(p=p, N=N, s=s, beta=beta, m=m, c=c)
            rows.append({
                "p": p, "c": c,
                "T_r": ring_allreduce_time(inp),
                "T_v_bound": allgatherv_time_bound(inp),
                "speedup_bound": speedup_lower_bound(p, c),
            })
    return rows
