"""Allgatherv exchange of sparse gradient messages.

Wire layout (little-endian)::

    StepMessage  magic:u32 worker_id:u32 step:u64 mode:u8 group_count:u32  (21 bytes)
                 then group_count GroupBlocks
    GroupBlock   group_id:u32 exponent:i32 entry_count:u32 then entry words

Entry words for modes 0 and 1 are single u32s ``[sign:1][d:3][index:28]``.
Mode 0 carries quantized values decoding to ``(-1)**sign * 2**(exponent - d)``;
mode 1 carries signs only (``d == 0``), each worth ``+-tau``. Mode 2 carries
uncompressed float32 values as ``index:u32 value:f32`` pairs; it backs the
uncompressed baseline and the quantizer-bypass test configuration.

Two transports deliver every worker's payload to every worker: an in-process
hub for threads and a TCP star relayed through rank 0.
"""
from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DTYPE, ParameterGroup, SparseGradient
from .errors import CommunicationError, EncodingError, ProtocolError
from .quantize import decode_arrays, quantize_arrays

MAGIC = 0x56474331
MODE_QUANTIZED = 0
MODE_SIGN = 1
MODE_RAW = 2
MODES = (MODE_QUANTIZED, MODE_SIGN, MODE_RAW)

_HEADER = struct.Struct("<IIQBI")
_BLOCK = struct.Struct("<IiI")
_FRAME = struct.Struct("<I")
HEADER_SIZE = _HEADER.size
INDEX_MASK = (1 << 28) - 1


def pack_entries(sign, d, index) -> np.ndarray:
    sign = np.asarray(sign, np.uint32)
    d = np.asarray(d, np.uint32)
    index = np.asarray(index, np.int64)
    if index.size and (index.min() < 0 or index.max() > INDEX_MASK):
        raise EncodingError("entry index does not fit in 28 bits")
    if d.size and d.max() > 7:
        raise EncodingError("exponent offset does not fit in 3 bits")
    return (sign << 31) | (d << 28) | index.astype(np.uint32)


def unpack_entries(words):
    words = np.asarray(words, np.uint32)
    return ((words >> 31).astype(np.uint8),
            ((words >> 28) & 7).astype(np.uint8),
            (words & INDEX_MASK).astype(np.int64))


@dataclass
class GroupBlock:
    """Entries of one parameter group.

    ``words`` holds one u32 per entry in modes 0/1 and an interleaved
    ``[index, float32 bits]`` pair per entry in mode 2.
    """

    group_id: int
    exponent: int
    words: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint32))

    def __post_init__(self):
        self.words = np.asarray(self.words, np.uint32)

    def entry_count(self, mode: int) -> int:
        return len(self.words) // 2 if mode == MODE_RAW else len(self.words)

    def indices(self, mode: int) -> np.ndarray:
        if mode == MODE_RAW:
            return self.words[0::2].astype(np.int64)
        return (self.words & INDEX_MASK).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, GroupBlock):
            return NotImplemented
        return (self.group_id == other.group_id and self.exponent == other.exponent
                and np.array_equal(self.words, other.words))


@dataclass
class StepMessage:
    worker_id: int
    step: int
    mode: int
    blocks: list = field(default_factory=list)
    magic: int = MAGIC

    @property
    def entry_count(self) -> int:
        return sum(b.entry_count(self.mode) for b in self.blocks)


def serialize(msg: StepMessage) -> bytes:
    if msg.mode not in MODES:
        raise EncodingError(f"unknown mode {msg.mode}")
    parts = [_HEADER.pack(msg.magic, msg.worker_id, msg.step, msg.mode, len(msg.blocks))]
    for block in msg.blocks:
        if msg.mode == MODE_RAW and len(block.words) % 2:
            raise EncodingError(f"group {block.group_id}: raw entries come in pairs")
        idx = block.indices(msg.mode)
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise EncodingError(f"group {block.group_id}: entries must be sorted with unique indexes")
        if msg.mode == MODE_RAW and idx.size and idx.max() > INDEX_MASK:
            raise EncodingError(f"group {block.group_id}: index does not fit in 28 bits")
        parts.append(_BLOCK.pack(block.group_id, block.exponent, block.entry_count(msg.mode)))
        parts.append(block.words.astype("<u4").tobytes())
    return b"".join(parts)


def parse(data: bytes) -> StepMessage:
    view = memoryview(data)
    if len(view) < HEADER_SIZE:
        raise ProtocolError(f"message of {len(view)} bytes is shorter than the header")
    magic, worker_id, step, mode, group_count = _HEADER.unpack_from(view, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic 0x{magic:08x}")
    if mode not in MODES:
        raise ProtocolError(f"unknown mode {mode}")
    pos = HEADER_SIZE
    blocks = []
    for _ in range(group_count):
        if pos + _BLOCK.size > len(view):
            raise ProtocolError("truncated group block header")
        gid, exponent, count = _BLOCK.unpack_from(view, pos)
        pos += _BLOCK.size
        nwords = 2 * count if mode == MODE_RAW else count
        end = pos + 4 * nwords
        if end > len(view):
            raise ProtocolError(f"group {gid}: truncated entries")
        words = np.frombuffer(view[pos:end], dtype="<u4").astype(np.uint32)
        blocks.append(GroupBlock(gid, exponent, words))
        pos = end
    if pos != len(view):
        raise ProtocolError(f"{len(view) - pos} trailing bytes")
    return StepMessage(worker_id, step, mode, blocks, magic)


# -- message builders ---------------------------------------------------------

def _split_by_group(send: SparseGradient, groups: Sequence[ParameterGroup]):
    bounds = np.array([g.offset for g in groups] + [groups[-1].stop])
    cuts = np.searchsorted(send.indices, bounds)
    for g, lo, hi in zip(groups, cuts[:-1], cuts[1:]):
        if hi > lo:
            yield g, send.indices[lo:hi] - g.offset, send.values[lo:hi], slice(lo, hi)


def encode_quantized(send: SparseGradient, groups, worker_id: int, step: int):
    """Quantize a global send set group by group.

    Returns ``(message, dropped)`` where ``dropped`` lists the global entries
    that could not be represented (offset above 7).
    """
    blocks = []
    dropped = np.zeros(len(send), bool)
    for g, local, vals, sl in _split_by_group(send, groups):
        exponent, keep, sign, d = quantize_arrays(vals)
        dropped[sl] = ~keep
        if exponent is None:
            continue
        blocks.append(GroupBlock(g.group_id, exponent, pack_entries(sign, d, local[keep])))
    msg = StepMessage(worker_id, step, MODE_QUANTIZED, blocks)
    return msg, SparseGradient(send.indices[dropped], send.values[dropped])


def encode_signs(send: SparseGradient, groups, worker_id: int, step: int) -> StepMessage:
    blocks = []
    for g, local, vals, _ in _split_by_group(send, groups):
        sign = (vals < 0).astype(np.uint8)
        blocks.append(GroupBlock(g.group_id, 0, pack_entries(sign, np.zeros_like(sign), local)))
    return StepMessage(worker_id, step, MODE_SIGN, blocks)


def encode_raw(send: SparseGradient, groups, worker_id: int, step: int) -> StepMessage:
    blocks = []
    for g, local, vals, _ in _split_by_group(send, groups):
        words = np.empty(2 * len(local), np.uint32)
        words[0::2] = local
        words[1::2] = np.asarray(vals, DTYPE).view(np.uint32)
        blocks.append(GroupBlock(g.group_id, 0, words))
    return StepMessage(worker_id, step, MODE_RAW, blocks)


def decode_block(block: GroupBlock, mode: int, tau: Optional[float] = None):
    """Group-local ``(indices, values)`` of one block."""
    if mode == MODE_RAW:
        return block.words[0::2].astype(np.int64), block.words[1::2].view(DTYPE).copy()
    sign, d, idx = unpack_entries(block.words)
    if mode == MODE_QUANTIZED:
        return idx, decode_arrays(block.exponent, sign, d)
    if tau is None:
        raise ProtocolError("sign-only messages need the run's tau to decode")
    t = DTYPE(tau)
    return idx, np.where(sign == 1, -t, t).astype(DTYPE)


def merge_decode(messages: Sequence[StepMessage], groups: Sequence[ParameterGroup],
                 p: int, tau: Optional[float] = None) -> SparseGradient:
    """Decode every worker's message and average the contributions over ``p``.

    Contributions to the same index are summed in worker_id order, so the
    result does not depend on arrival order.
    """
    if not messages:
        return SparseGradient()
    modes = {m.mode for m in messages}
    if len(modes) != 1:
        raise ProtocolError(f"mixed modes in one step: {sorted(modes)}")
    steps = {m.step for m in messages}
    if len(steps) != 1:
        raise ProtocolError(f"messages from different steps: {sorted(steps)}")
    mode = modes.pop()
    all_idx, all_val = [], []
    for msg in sorted(messages, key=lambda m: m.worker_id):
        for block in msg.blocks:
            if not 0 <= block.group_id < len(groups):
                raise ProtocolError(f"worker {msg.worker_id}: unknown group {block.group_id}")
            g = groups[block.group_id]
            idx, vals = decode_block(block, mode, tau)
            if idx.size and idx.max() >= g.size:
                raise ProtocolError(f"worker {msg.worker_id}: index beyond group {g.group_id}")
            all_idx.append(idx + g.offset)
            all_val.append(vals)
    if not all_idx:
        return SparseGradient()
    idx = np.concatenate(all_idx)
    vals = np.concatenate(all_val)
    uniq, inverse = np.unique(idx, return_inverse=True)
    total = np.zeros(len(uniq), DTYPE)
    np.add.at(total, inverse, vals)
    return SparseGradient(uniq, total / DTYPE(p))


# -- transports ---------------------------------------------------------------

def _check_steps(messages, step):
    for m in messages:
        if m.step != step:
            raise CommunicationError(f"sent step {m.step} while step {step} was expected", m.worker_id)


class Transport:
    """Exchange raw payloads among ``world_size`` ranks; subclass per medium."""

    rank: int
    world_size: int

    def exchange(self, payload: bytes) -> list[bytes]:
        raise NotImplementedError

    def allgatherv(self, local: StepMessage) -> list[StepMessage]:
        return allgatherv(local, self)

    def close(self):
        pass


def allgatherv(local: StepMessage, peers: Transport) -> list[StepMessage]:
    """Blocking allgatherv: every rank gets every message, ordered by worker_id."""
    received = [parse(b) for b in peers.exchange(serialize(local))]
    _check_steps(received, local.step)
    return sorted(received, key=lambda m: m.worker_id)


class LocalTransport(Transport):
    """Single-worker transport; returns the caller's own payload."""

    def __init__(self):
        self.rank, self.world_size = 0, 1

    def exchange(self, payload):
        return [bytes(payload)]


class InProcHub:
    """Rendezvous point for :class:`InProcTransport` endpoints running in threads."""

    def __init__(self, world_size: int, timeout: float = 120.0):
        self.world_size = world_size
        self._slots: list = [None] * world_size
        self._barrier = threading.Barrier(world_size, timeout=timeout)

    def endpoint(self, rank: int) -> "InProcTransport":
        return InProcTransport(self, rank)

    def _exchange(self, rank, payload):
        self._slots[rank] = bytes(payload)
        try:
            self._barrier.wait()
            out = list(self._slots)
            self._barrier.wait()
        except threading.BrokenBarrierError:
            missing = [i for i, s in enumerate(self._slots) if s is None]
            raise CommunicationError("collective aborted", missing[0] if missing else None) from None
        return out

    def abort(self):
        self._barrier.abort()


class InProcTransport(Transport):
    def __init__(self, hub: InProcHub, rank: int):
        self.hub, self.rank, self.world_size = hub, rank, hub.world_size

    def exchange(self, payload):
        return self.hub._exchange(self.rank, payload)

    def allgatherv(self, local):
        try:
            return allgatherv(local, self)
        except CommunicationError:
            self.hub.abort()
            raise

    def close(self):
        self.hub.abort()


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


def _recv_exact(sock, n, peer):
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError as exc:
            raise CommunicationError(f"receive failed: {exc}", peer) from exc
        if not chunk:
            raise CommunicationError("peer disconnected", peer)
        buf += chunk
    return bytes(buf)


def send_frame(sock, payload: bytes, peer=None):
    try:
        sock.sendall(_FRAME.pack(len(payload)) + payload)
    except OSError as exc:
        raise CommunicationError(f"send failed: {exc}", peer) from exc


def recv_frame(sock, peer=None) -> bytes:
    (length,) = _FRAME.unpack(_recv_exact(sock, _FRAME.size, peer))
    return _recv_exact(sock, length, peer)


class TcpTransport(Transport):
    """Allgatherv over TCP, relayed through rank 0.

    Rank 0 listens on the rendezvous address; every other rank connects and
    introduces itself with a frame holding its rank. Per step each rank sends
    one frame to rank 0, which checks the step numbers and returns all
    ``world_size`` frames in rank order. Frames are a u32 little-endian byte
    length followed by the serialized message.
    """

    def __init__(self, rank: int, world_size: int, address: str = "127.0.0.1:0",
                 timeout: float = 60.0):
        self.rank, self.world_size, self.timeout = rank, world_size, timeout
        self._host, self._port = parse_address(address)
        self._listener = None
        self._peers: dict[int, socket.socket] = {}
        self._sock = None
        if rank == 0:
            self._listener = socket.create_server((self._host, self._port))
            self._listener.settimeout(timeout)
            self._port = self._listener.getsockname()[1]

    @property
    def address(self) -> str:
        return f"{self._host}:{self._port}"

    def connect(self):
        if self.rank == 0:
            while len(self._peers) < self.world_size - 1:
                try:
                    conn, _ = self._listener.accept()
                except socket.timeout:
                    raise CommunicationError("timed out waiting for peers") from None
                conn.settimeout(self.timeout)
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                (peer,) = struct.unpack("<I", recv_frame(conn))
                if not 0 < peer < self.world_size or peer in self._peers:
                    conn.close()
                    raise CommunicationError("invalid or duplicate rank in hello", peer)
                self._peers[peer] = conn
            return self
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                sock = socket.create_connection((self._host, self._port), timeout=self.timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise CommunicationError("could not reach rendezvous", 0) from None
                time.sleep(0.05)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_frame(sock, struct.pack("<I", self.rank), 0)
        self._sock = sock
        return self

    def exchange(self, payload):
        if self.rank != 0:
            send_frame(self._sock, payload, 0)
            return [recv_frame(self._sock, 0) for _ in range(self.world_size)]
        frames = [bytes(payload)]
        for peer in range(1, self.world_size):
            frames.append(recv_frame(self._peers[peer], peer))
        steps = [_HEADER.unpack_from(f, 0)[2] if len(f) >= HEADER_SIZE else None for f in frames]
        for peer, s in enumerate(steps):
            if s != steps[0]:
                self.close()
                raise CommunicationError(f"sent step {s} while rank 0 is at step {steps[0]}", peer)
        blob = b"".join(_FRAME.pack(len(f)) + f for f in frames)
        for peer in range(1, self.world_size):
            try:
                self._peers[peer].sendall(blob)
            except OSError as exc:
                raise CommunicationError(f"send failed: {exc}", peer) from exc
        return frames

    def close(self):
        for conn in self._peers.values():
            conn.close()
        self._peers.clear()
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self._listener is not None:
            self._listener.close()
            self._listener = None
