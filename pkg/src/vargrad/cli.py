"""Command line entry point: ``vargrad {train,costmodel,codec-bench}``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import collective as coll
from . import costmodel
from .codecs import hybrid_step, strom_step
from .config import TRANSPORTS, load_run_config
from .core import GateConfig, GradientStats, make_layout
from .errors import ConfigurationError, DomainError, TraceFormatError
from .gate import gate_step
from .trace import read_trace
from .trainer import compression_ratio, train


def _json_safe(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def _dump(obj, out=None):
    text = json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_train(args) -> int:
    try:
        run = load_run_config(args.config)
        overrides = {k: v for k, v in (("workers", args.workers), ("seed", args.seed),
                                        ("transport", args.transport),
                                        ("rendezvous", args.rendezvous)) if v is not None}
        if overrides:
            run = run.replace(**overrides)
    except ConfigurationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(run, trace_path=args.record_trace)
    result.metrics.to_csv(out / "metrics.csv")
    _dump({**result.summary, "config": run.to_dict()}, out / "summary.json")
    print(f"accuracy={result.final_accuracy:.4f} compression={result.compression_ratio:.1f}")
    return 0


def _number_list(text, kind):
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty range")
    try:
        return [kind(t) for t in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def cmd_costmodel(args) -> int:
    try:
        rows = costmodel.sweep(args.p, args.c, args.N, args.s, args.beta, args.m)
    except DomainError as exc:
        print(f"invalid range: {exc}", file=sys.stderr)
        return 2
    _dump({"N": args.N, "s": args.s, "beta": args.beta, "m": args.m,
           "break_even_c": {str(p): costmodel.break_even_ratio(p) for p in args.p},
           "rows": rows}, args.out)
    return 0


def bench(records, codec: str, gate: GateConfig, group_sizes=None) -> dict:
    """Replay a codec over recorded gradient sums and summarize what it would send."""
    n = records[0].size
    groups = make_layout(group_sizes or [n])
    if sum(g.size for g in groups) != n:
        raise ConfigurationError(f"group sizes add up to {sum(g.size for g in groups)}, trace has {n}")
    stats = GradientStats.zeros(n)
    residual = np.zeros(n, np.float32)
    sent_counts, rel_errors = [], []
    dropped = 0
    transmitted = np.zeros(n, np.float64)
    truth = np.zeros(n, np.float64)
    for step, sums in enumerate(records):
        truth += sums.sum_mean
        if codec == "basic":
            send, stats = gate_step(stats, sums, gate)
            msg, lost = coll.encode_quantized(send, groups, 0, step)
            stats.r[lost.indices] += lost.values
            dropped += len(lost)
            decoded = coll.merge_decode([msg], groups, 1)
            exact = send.to_dense(n)[decoded.indices]
            rel_errors.extend(np.abs(decoded.values - exact) / np.abs(exact))
        elif codec == "strom":
            send, residual = strom_step(residual, sums, gate.tau)
            msg = coll.encode_signs(send, groups, 0, step)
            decoded = coll.merge_decode([msg], groups, 1, gate.tau)
        else:
            send, stats = hybrid_step(stats, sums, gate)
            msg = coll.encode_signs(send, groups, 0, step)
            decoded = coll.merge_decode([msg], groups, 1, gate.tau)
        transmitted[decoded.indices] += decoded.values
        sent_counts.append(msg.entry_count)
    norm = np.linalg.norm(truth)
    report = {
        "codec": codec, "alpha": gate.alpha, "zeta": gate.zeta, "tau": gate.tau,
        "steps": len(records), "n_params": n,
        "sent_total": int(sum(sent_counts)),
        "sent_per_step_mean": float(np.mean(sent_counts)),
        "compression_ratio": compression_ratio(n, sent_counts),
        "outstanding_mass_relative": float(np.linalg.norm(truth - transmitted) / norm) if norm else 0.0,
    }
    if codec == "basic":
        report["dropped_unrepresentable"] = dropped
        report["quantization_rel_error_mean"] = float(np.mean(rel_errors)) if rel_errors else 0.0
        report["quantization_rel_error_max"] = float(np.max(rel_errors)) if rel_errors else 0.0
    return report


def cmd_codec_bench(args) -> int:
    try:
        records = read_trace(args.trace)
    except TraceFormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return 2
    if not records:
        print("trace holds no records", file=sys.stderr)
        return 3
    try:
        gate = GateConfig(args.alpha, args.zeta, args.tau if args.codec != "basic" else None)
        if args.codec != "basic" and args.tau is None:
            raise ConfigurationError(f"codec {args.codec} needs --tau", "tau")
        report = bench(records, args.codec, gate, args.group_sizes)
    except ConfigurationError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return 2
    _dump(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vargrad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="directory for metrics.csv and summary.json")
    p.add_argument("--workers", type=int)
    p.add_argument("--transport", choices=TRANSPORTS)
    p.add_argument("--rendezvous", help="host:port of rank 0 for the tcp transport")
    p.add_argument("--seed", type=int)
    p.add_argument("--record-trace", help="write worker 0's gradient sums to this trace file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("costmodel", help="sweep the communication cost model")
    p.add_argument("--p", type=lambda t: _number_list(t, int), required=True, help="comma list of node counts")
    p.add_argument("--c", type=lambda t: _number_list(t, float), required=True,
                   help="comma list of compression ratios")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--s", type=float, default=32)
    p.add_argument("--beta", type=float, default=1e-9)
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_costmodel)

    p = sub.add_parser("codec-bench", help="replay a codec over a recorded trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--codec", choices=("basic", "strom", "hybrid"), required=True)
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--zeta", type=float, default=0.999)
    p.add_argument("--tau", type=float)
    p.add_argument("--group-sizes", type=lambda t: _number_list(t, int))
    p.add_argument("--out")
    p.set_defaults(func=cmd_codec_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
