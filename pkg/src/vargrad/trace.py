"""Recorded gradient-sum traces for offline codec replay.

File layout, little-endian: a u32 format version, then one length-prefixed
record per step. A record is ``u32 length`` followed by ``batch_size:u32
n:u32 sum_mean:f32[n] sum_sq_mean:f32[n]``.
"""
from __future__ import annotations

import struct

import numpy as np

from .core import BatchGradientSums
from .errors import TraceFormatError

TRACE_VERSION = 1
_U32 = struct.Struct("<I")
_REC = struct.Struct("<II")


def encode_record(sums: BatchGradientSums) -> bytes:
    body = (_REC.pack(sums.batch_size, sums.size)
            + sums.sum_mean.astype("<f4").tobytes()
            + sums.sum_sq_mean.astype("<f4").tobytes())
    return _U32.pack(len(body)) + body


class TraceWriter:
    def __init__(self, path, n_params=None):
        self.n_params = n_params
        self._fh = open(path, "wb")
        self._fh.write(_U32.pack(TRACE_VERSION))

    def write(self, sums: BatchGradientSums):
        if self.n_params is not None and sums.size != self.n_params:
            raise TraceFormatError(f"record has {sums.size} parameters, trace has {self.n_params}")
        self._fh.write(encode_record(sums))

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trace(path, records):
    with TraceWriter(path) as w:
        for sums in records:
            w.write(sums)


def read_trace(path) -> list[BatchGradientSums]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise TraceFormatError("missing version header")
    (version,) = _U32.unpack_from(data, 0)
    if version != TRACE_VERSION:
        raise TraceFormatError(f"trace version {version}, expected {TRACE_VERSION}")
    pos = 4
    out = []
    while pos < len(data):
        if pos + 4 > len(data):
            raise TraceFormatError("truncated record length")
        (length,) = _U32.unpack_from(data, pos)
        pos += 4
        if pos + length > len(data) or length < _REC.size:
            raise TraceFormatError("truncated record")
        batch_size, n = _REC.unpack_from(data, pos)
        if length != _REC.size + 8 * n:
            raise TraceFormatError("record length does not match its parameter count")
        start = pos + _REC.size
        mean = np.frombuffer(data, "<f4", n, start).astype(np.float32)
        sq = np.frombuffer(data, "<f4", n, start + 4 * n).astype(np.float32)
        out.append(BatchGradientSums(mean, sq, batch_size))
        pos += length
    return out
