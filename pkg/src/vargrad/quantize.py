"""4-bit logarithmic quantization: one sign bit plus a 3-bit exponent offset.

Within a group every value is rounded to a power of two and stored as its
distance ``d`` (in octaves) below ``2**e``, where ``e = floor(log2(max|g|))``
is sent once per group. Offsets above 7 cannot be represented and are dropped.

Power-of-two rounding works directly on the float32 bit pattern: clearing the
significand floors to a power of two, and adding one to the top significand bit
before clearing rounds to the nearest one (midpoints go up).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DTYPE, ParameterGroup, SparseGradient
from .errors import ConfigurationError, DataError, DomainError

MAX_D = 7

_EXP_MASK = np.uint32(0x7F800000)
_KEEP_EXP = np.uint32(0xFF800000)
_MANT_MSB = np.uint32(0x00400000)


@dataclass(frozen=True)
class GroupQuantHeader:
    group_id: int
    exponent: int


@dataclass(frozen=True)
class QuantizedEntry:
    sign: int  # 1 = negative
    d: int
    index: int

    def __post_init__(self):
        if self.sign not in (0, 1):
            raise ConfigurationError("must be 0 or 1", "sign")
        if not 0 <= self.d <= MAX_D:
            raise ConfigurationError(f"{self.d} outside [0, 7]", "d")
        if not 0 <= self.index < (1 << 28):
            raise ConfigurationError(f"{self.index} outside [0, 2^28)", "index")


def _as_positive_f32(x):
    arr = np.asarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("power-of-two rounding needs positive finite input")
    return arr


def _return(arr, scalar):
    return arr[()] if scalar else arr


def floor_pow2_arith(x):
    """``2**floor(log2 x)`` through frexp; exact for every positive float32."""
    arr = np.asarray(x, dtype=DTYPE)
    _, e = np.frexp(arr)
    return np.ldexp(np.ones_like(arr), e - 1)


def round_pow2_arith(x):
    """Linearly nearest power of two, midpoints rounding up."""
    arr = np.asarray(x, dtype=DTYPE)
    lo = floor_pow2_arith(arr).astype(np.float64)
    hi = 2.0 * lo
    xd = arr.astype(np.float64)
    with np.errstate(over="ignore"):  # values above 1.5 * 2**127 round to inf
        return np.where(xd - lo < hi - xd, lo, hi).astype(DTYPE)


def fast_floor_pow2(x):
    """``2**floor(log2 x)`` by zeroing the float32 significand.

    Subnormal inputs have no implicit leading bit and use :func:`floor_pow2_arith`.
    """
    scalar = np.ndim(x) == 0
    arr = _as_positive_f32(x)
    bits = arr.view(np.uint32)
    out = (bits & _KEEP_EXP).view(DTYPE)
    subnormal = (bits & _EXP_MASK) == 0
    if np.any(subnormal):
        out = np.where(subnormal, floor_pow2_arith(arr), out)
    return _return(np.asarray(out, DTYPE), scalar)


def fast_round_pow2(x):
    """Nearest power of two: add one at the top significand bit, then zero the significand.

    A carry out of the significand bumps the exponent, which is exactly the
    round-up case. Values at or above ``1.5 * 2**127`` overflow to inf.
    """
    scalar = np.ndim(x) == 0
    arr = _as_positive_f32(x)
    bits = arr.view(np.uint32)
    out = ((bits + _MANT_MSB) & _KEEP_EXP).view(DTYPE)
    subnormal = (bits & _EXP_MASK) == 0
    if np.any(subnormal):
        out = np.where(subnormal, round_pow2_arith(arr), out)
    return _return(np.asarray(out, DTYPE), scalar)


def pow2_exponent(p):
    """Integer ``k`` for an exact power of two ``p = 2**k``."""
    _, e = np.frexp(np.asarray(p, dtype=DTYPE))
    return e.astype(np.int64) - 1


def quantize_arrays(values):
    """Vectorized core of :func:`quantize_group`.

    Returns ``(exponent, keep, sign, d)``: ``keep`` masks the input positions
    that survive (nonzero and ``d <= 7``); ``sign`` and ``d`` cover the kept
    positions only. ``exponent`` is None when every value is zero.
    """
    vals = np.asarray(values, dtype=DTYPE)
    if not np.all(np.isfinite(vals)):
        raise DataError("cannot quantize NaN or infinite gradient values")
    mag = np.abs(vals)
    nonzero = mag > 0
    if not np.any(nonzero):
        return None, np.zeros(vals.shape, bool), np.zeros(0, np.uint8), np.zeros(0, np.uint8)
    top = fast_floor_pow2(mag.max())
    exponent = int(pow2_exponent(top))
    nz = mag[nonzero]
    rounded = np.where(nz > top, top, fast_round_pow2(nz))
    d_all = exponent - pow2_exponent(rounded)
    keep = nonzero.copy()
    keep[nonzero] = d_all <= MAX_D
    d = d_all[d_all <= MAX_D].astype(np.uint8)
    sign = (vals[keep] < 0).astype(np.uint8)
    return exponent, keep, sign, d


def _split_values(values):
    if isinstance(values, SparseGradient):
        return values.indices, values.values
    pairs = list(values)
    if not pairs:
        return np.zeros(0, np.int64), np.zeros(0, DTYPE)
    idx, vals = zip(*pairs)
    return np.asarray(idx, np.int64), np.asarray(vals, DTYPE)


def quantize_group(values, group: ParameterGroup) -> tuple[Optional[GroupQuantHeader], list[QuantizedEntry]]:
    """Quantize the selected ``(index, value)`` pairs of one group.

    Indexes are positions within the group. The anchor ``max|g|`` is taken over
    the given values only. Values with ``d > 7`` and exact zeros are left out of
    the result; the caller decides what happens to them. An all-zero input
    yields ``(None, [])``.
    """
    idx, vals = _split_values(values)
    if idx.size and (idx.min() < 0 or idx.max() >= group.size):
        raise ConfigurationError(f"index outside group {group.group_id} of size {group.size}", "index")
    order = np.argsort(idx, kind="stable")
    idx, vals = idx[order], vals[order]
    exponent, keep, sign, d = quantize_arrays(vals)
    if exponent is None:
        return None, []
    entries = [QuantizedEntry(int(s), int(dd), int(i)) for s, dd, i in zip(sign, d, idx[keep])]
    return GroupQuantHeader(group.group_id, exponent), entries


def decode_arrays(exponent: int, sign, d):
    mag = np.ldexp(np.ones(len(d), DTYPE), exponent - np.asarray(d, np.int64))
    return np.where(np.asarray(sign) == 1, -mag, mag).astype(DTYPE)


def dequantize(header: GroupQuantHeader, entries: list[QuantizedEntry]) -> SparseGradient:
    """Inverse of :func:`quantize_group`: ``(-1)**sign * 2**(e - d)`` per entry."""
    if not entries:
        return SparseGradient()
    sign = [e.sign for e in entries]
    d = [e.d for e in entries]
    return SparseGradient([e.index for e in entries], decode_arrays(header.exponent, sign, d))
