"""Synchronous data-parallel training with compressed gradient exchange.

Each step, every worker computes per-sample gradients on its own shard,
reduces them to the two running sums, runs its codec, and exchanges the encoded
message with allgatherv. All workers decode the same gathered messages into the
same mean update and apply it with their own optimizer copy, so parameter
replicas stay bit-identical without ever being broadcast.

A worker's per-step program is a generator: it yields its outgoing message,
is resumed with the gathered list, applies the update and yields ``None``. The
sequential driver steps all generators in lockstep; the threaded drivers hand
each generator to its own thread and transport. Both execute the same code.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import collective as coll
from .codecs import hybrid_step, strom_step
from .config import RunConfig
from .core import DTYPE, GradientStats, SparseGradient, per_sample_sums
from .data import Dataset, make_blobs
from .errors import CommunicationError, ConfigurationError, DivergenceError, DomainError
from .gate import gate_step
from .models import build_model
from .optim import make_optimizer
from .trace import TraceWriter

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "step", "train_loss", "test_accuracy",
                  "sent_params_mean", "bytes_on_wire", "compression_ratio")


def compression_ratio(total_params: int, sent_counts) -> float:
    """Parameter count over the mean number of parameters sent per step per worker.

    Each sent pair occupies one 32-bit word, the same as an uncompressed
    parameter, so counts compare directly. Returns ``inf`` if nothing was sent.
    """
    counts = np.asarray(sent_counts, dtype=np.float64)
    if counts.size == 0:
        raise DomainError("no steps recorded")
    mean = counts.mean()
    return math.inf if mean == 0 else total_params / mean


def param_digest(params) -> str:
    return hashlib.blake2b(params.tobytes(), digest_size=16).hexdigest()


def message_size(msg: coll.StepMessage) -> int:
    """Serialized length in bytes, without serializing."""
    return coll.HEADER_SIZE + sum(12 + 4 * len(b.words) for b in msg.blocks)


def shard_batches(n_train: int, workers: int, rank: int, batch_size: int, seed: int, epoch: int):
    """Disjoint per-worker shards of a seeded per-epoch permutation, cut into batches."""
    perm = np.random.default_rng([seed, 1, epoch]).permutation(n_train)
    shard_size = n_train // workers
    shard = perm[rank * shard_size:(rank + 1) * shard_size]
    steps = shard_size // batch_size
    return [shard[i * batch_size:(i + 1) * batch_size] for i in range(steps)]


def build_dataset(run: RunConfig) -> Dataset:
    spec = dict(run.dataset_spec)
    if spec.pop("kind") != "blobs":
        raise ConfigurationError("only 'blobs' is available", "dataset.kind")
    return make_blobs(seed=run.seed, **spec)


def build(run: RunConfig):
    """Dataset, model and the shared initial parameter vector for a run."""
    data = build_dataset(run)
    model = build_model(run.model, data.n_features, data.n_classes)
    if model.kind == "logistic" and data.n_classes != 2:
        raise ConfigurationError("logistic regression needs two classes", "dataset.n_classes")
    params0 = model.init_params(np.random.default_rng([run.seed, 2]))
    return data, model, params0


@dataclass
class StepLog:
    epoch: int
    step: int
    loss: float
    sent: int
    nbytes: int
    digest: str


class Worker:
    """One data-parallel replica: parameters, optimizer state and codec state."""

    def __init__(self, rank: int, run: RunConfig, data: Dataset, model, params0,
                 record_residuals: bool = False, trace: Optional[TraceWriter] = None):
        self.rank, self.run, self.data, self.model = rank, run, data, model
        self.groups = model.layout
        n = model.n_params
        self.n = n
        self.params = params0.copy()
        self.opt = make_optimizer(run.optimizer, n)
        self.stats = GradientStats.zeros(n)
        self.residual = np.zeros(n, DTYPE)  # strom only
        self.record_residuals = record_residuals
        self.residual_samples: list = []
        self.trace = trace
        self.grad_total = np.zeros(n, np.float64)
        self.logs: list[StepLog] = []
        self.epoch_accuracy: list[float] = []
        self.last_update = None

    @property
    def current_residual(self):
        return self.residual if self.run.codec == "strom" else self.stats.r

    def local_step(self, step: int, batch_idx):
        run = self.run
        X, y = self.data.X_train[batch_idx], self.data.y_train[batch_idx]
        loss = float(np.mean(self.model.per_sample_loss(self.params, X, y)))
        if not math.isfinite(loss):
            raise DivergenceError(f"worker {self.rank}: loss is {loss} at step {step}")
        grads = self.model.per_sample_gradients(self.params, X, y)
        sums = per_sample_sums(grads, len(batch_idx))
        if self.trace is not None:
            self.trace.write(sums)
        self.grad_total += sums.sum_mean
        if self.record_residuals:
            self.residual_samples.append(np.abs(self.current_residual + sums.sum_mean))
        if run.codec == "none":
            send = SparseGradient(np.arange(self.n), sums.sum_mean)
            msg = coll.encode_raw(send, self.groups, self.rank, step)
        elif run.codec == "basic":
            send, self.stats = gate_step(self.stats, sums, run.gate)
            if run.bypass_quantization:
                msg = coll.encode_raw(send, self.groups, self.rank, step)
            else:
                msg, dropped = coll.encode_quantized(send, self.groups, self.rank, step)
                # unrepresentable values go back to the residual and wait
                self.stats.r[dropped.indices] += dropped.values
        elif run.codec == "strom":
            send, self.residual = strom_step(self.residual, sums, run.gate.tau)
            msg = coll.encode_signs(send, self.groups, self.rank, step)
        else:
            send, self.stats = hybrid_step(self.stats, sums, run.gate)
            msg = coll.encode_signs(send, self.groups, self.rank, step)
        return msg, loss

    def apply(self, messages):
        merged = coll.merge_decode(messages, self.groups, self.run.workers, self.run.gate.tau)
        update = merged.to_dense(self.n)
        self.opt.step(self.params, update)
        self.last_update = update

    def test_accuracy(self) -> float:
        pred = self.model.predict(self.params, self.data.X_test)
        return float(np.mean(pred == self.data.y_test))

    def program(self):
        run = self.run
        step = 0
        for epoch in range(run.epochs):
            self.opt.set_epoch(epoch)
            batches = shard_batches(len(self.data.y_train), run.workers, self.rank,
                                    run.batch_size, run.seed, epoch)
            for batch_idx in batches:
                msg, loss = self.local_step(step, batch_idx)
                messages = yield msg
                self.apply(messages)
                self.logs.append(StepLog(epoch, step, loss, msg.entry_count,
                                         message_size(msg), param_digest(self.params)))
                step += 1
                yield None
            if self.rank == 0:
                self.epoch_accuracy.append(self.test_accuracy())


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_COLUMNS)
            for row in self.rows:
                writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])

    def column(self, name):
        return [row[name] for row in self.rows]


def _fmt(x):
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(x)
    return str(x)


@dataclass
class TrainResult:
    run: RunConfig
    metrics: MetricsTable
    summary: dict
    final_params: np.ndarray
    digests: list              # per step, one digest per worker
    replicas_consistent: bool
    conservation_errors: list  # per step; empty unless tracked
    residual_samples: Optional[np.ndarray] = None

    @property
    def final_accuracy(self) -> float:
        return self.summary["final_test_accuracy"]

    @property
    def compression_ratio(self) -> float:
        return self.summary["compression_ratio"]


def _drive_sequential(workers, on_step=None):
    programs = [w.program() for w in workers]
    while True:
        try:
            pending = [next(g) for g in programs]
        except StopIteration:
            return
        gathered = sorted((coll.parse(coll.serialize(m)) for m in pending), key=lambda m: m.worker_id)
        for g in programs:
            g.send(gathered)
        if on_step is not None:
            on_step(workers)


def _make_transports(run: RunConfig):
    if run.transport == "inproc":
        hub = coll.InProcHub(run.workers)
        return [hub.endpoint(r) for r in range(run.workers)]
    root = coll.TcpTransport(0, run.workers, run.rendezvous)
    return [root] + [coll.TcpTransport(r, run.workers, root.address) for r in range(1, run.workers)]


def _drive_threads(workers, run: RunConfig):
    transports = _make_transports(run)
    errors: list = [None] * len(workers)

    def body(worker, transport):
        try:
            if isinstance(transport, coll.TcpTransport):
                transport.connect()
            program = worker.program()
            for msg in program:
                program.send(transport.allgatherv(msg))
        except BaseException as exc:  # noqa: BLE001 - reported by the orchestrator
            errors[worker.rank] = exc
            for t in transports:
                t.close()

    threads = [threading.Thread(target=body, args=(w, t), name=f"worker-{w.rank}", daemon=True)
               for w, t in zip(workers, transports)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for t in transports:
        t.close()
    raised = [e for e in errors if e is not None]
    if raised:
        root_causes = [e for e in raised if not isinstance(e, CommunicationError)]
        raise (root_causes or raised)[0]


def train(run: RunConfig, *, record_residuals: bool = False, track_conservation: bool = False,
          trace_path=None) -> TrainResult:
    """Run synchronous data-parallel training and collect per-epoch metrics.

    ``track_conservation`` checks, after every step, that applied updates plus
    outstanding residuals equal the running sum of batch-mean gradients; it
    needs the sequential driver and the quantizer bypassed. ``trace_path``
    records worker 0's per-step gradient sums for later codec replay.
    """
    if track_conservation and not (run.bypass_quantization and run.transport == "sequential"):
        raise ConfigurationError("conservation tracking needs bypass_quantization and the sequential transport")
    data, model, params0 = build(run)
    trace = TraceWriter(trace_path, model.n_params) if trace_path is not None else None
    workers = [Worker(r, run, data, model, params0, record_residuals, trace if r == 0 else None)
               for r in range(run.workers)]
    conservation: list[float] = []
    applied_total = np.zeros(model.n_params, np.float64)

    def check(ws):
        applied_total[:] += ws[0].last_update.astype(np.float64) * run.workers
        lhs = applied_total + sum(w.stats.r.astype(np.float64) for w in ws)
        rhs = sum(w.grad_total for w in ws)
        conservation.append(float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-30)))

    try:
        if run.transport == "sequential" or run.workers == 1 and run.transport == "inproc":
            _drive_sequential(workers, check if track_conservation else None)
        else:
            _drive_threads(workers, run)
    finally:
        if trace is not None:
            trace.close()
    return _collect(run, model, workers, conservation)


def _collect(run, model, workers, conservation) -> TrainResult:
    logs = [w.logs for w in workers]
    n_steps = len(logs[0])
    if n_steps == 0:
        raise ConfigurationError("no training steps: shards are smaller than one batch", "batch_size")
    digests = [[lg[i].digest for lg in logs] for i in range(n_steps)]
    consistent = all(len(set(d)) == 1 for d in digests)
    if not consistent:
        log.error("parameter replicas diverged")
    metrics = MetricsTable()
    all_sent: list = []
    total_bytes = 0
    for epoch in range(run.epochs):
        idx = [i for i, s in enumerate(logs[0]) if s.epoch == epoch]
        sent = [lg[i].sent for i in idx for lg in logs]
        all_sent.extend(sent)
        nbytes = sum(lg[i].nbytes for i in idx for lg in logs)
        total_bytes += nbytes
        metrics.rows.append({
            "epoch": epoch,
            "step": idx[-1] + 1 if idx else 0,
            "train_loss": float(np.mean([lg[i].loss for i in idx for lg in logs])) if idx else math.nan,
            "test_accuracy": workers[0].epoch_accuracy[epoch],
            "sent_params_mean": float(np.mean(sent)) if sent else 0.0,
            "bytes_on_wire": nbytes,
            "compression_ratio": compression_ratio(model.n_params, all_sent) if all_sent else math.nan,
        })
    summary = {
        "method": run.codec,
        "alpha": run.gate.alpha if run.codec in ("basic", "hybrid") else None,
        "tau": run.gate.tau,
        "zeta": run.gate.zeta,
        "optimizer": run.optimizer.kind,
        "workers": run.workers,
        "batch_size": run.batch_size,
        "epochs": run.epochs,
        "seed": run.seed,
        "n_params": model.n_params,
        "steps": n_steps,
        "final_test_accuracy": workers[0].epoch_accuracy[-1],
        "final_train_loss": metrics.rows[-1]["train_loss"],
        "compression_ratio": compression_ratio(model.n_params, all_sent),
        "bytes_on_wire": total_bytes,
        "replicas_consistent": consistent,
    }
    residuals = None
    if workers[0].record_residuals:
        residuals = np.concatenate([np.concatenate(w.residual_samples) for w in workers])
    return TrainResult(run, metrics, summary, workers[0].params.copy(), digests, consistent,
                       conservation, residuals)

