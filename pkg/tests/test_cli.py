import json
import struct

import numpy as np
import pytest

from vargrad.cli import main
from vargrad.core import BatchGradientSums
from vargrad.trace import write_trace

CONFIG = {"workers": 2, "batch_size": 8, "epochs": 2, "seed": 3, "codec": "none",
          "dataset": {"n_samples": 400, "n_features": 6}}


def write_config(tmp_path, **changes):
    data = {**CONFIG, **changes}
    data = {k: v for k, v in data.items() if v is not None}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return path


def test_train_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["compression_ratio"] == 1.0
    assert 0.5 < summary["final_test_accuracy"] <= 1.0
    assert (tmp_path / "o" / "metrics.csv").read_text().startswith("epoch,")


def test_train_missing_seed(tmp_path, capsys):
    cfg = write_config(tmp_path, seed=None)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_train_twice_byte_identical(tmp_path):
    cfg = write_config(tmp_path, codec="basic", gate={"alpha": 1.5})
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_train_overrides_and_trace(tmp_path):
    cfg = write_config(tmp_path, codec="basic")
    trace = tmp_path / "t.bin"
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "3",
               "--transport", "inproc", "--record-trace", str(trace)])
    assert rc == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["workers"] == 3 and summary["replicas_consistent"]
    assert trace.stat().st_size > 4


def costmodel(tmp_path, *args):
    out = tmp_path / "cm.json"
    assert main(["costmodel", *args, "--out", str(out)]) == 0
    return json.loads(out.read_text())


def test_costmodel_single_point(tmp_path):
    rows = costmodel(tmp_path, "--p", "8", "--c", "100", "--N", "1000000")["rows"]
    assert len(rows) == 1
    assert rows[0]["speedup_bound"] == pytest.approx(21.875, rel=1e-12)


def test_costmodel_crossing(tmp_path):
    p = 16
    result = costmodel(tmp_path, "--p", str(p), "--c", "2,4,8,8.533333333333333,9,16,32", "--N", "1000")
    bounds = [r["speedup_bound"] for r in result["rows"]]
    assert bounds == sorted(bounds)
    assert bounds[2] < 1 < bounds[4]
    assert bounds[3] == pytest.approx(1.0)
    assert result["break_even_c"]["16"] == pytest.approx(p * p / (2 * (p - 1)))


@pytest.mark.parametrize("args", [["--p", "", "--c", "10"], ["--p", "4", "--c", ","]])
def test_costmodel_empty_range(args):
    with pytest.raises(SystemExit) as info:
        main(["costmodel", *args, "--N", "10"])
    assert info.value.code == 2


def test_costmodel_out_of_domain(capsys):
    assert main(["costmodel", "--p", "1", "--c", "10", "--N", "10"]) == 2


def trace_file(tmp_path, records):
    path = tmp_path / "trace.bin"
    write_trace(path, records)
    return path


def bench(tmp_path, trace, *args):
    out = tmp_path / "bench.json"
    assert main(["codec-bench", "--trace", str(trace), *args, "--out", str(out)]) == 0
    return json.loads(out.read_text())


def test_bench_zero_trace(tmp_path):
    zeros = np.zeros(20, np.float32)
    trace = trace_file(tmp_path, [BatchGradientSums(zeros, zeros, 4)] * 5)
    report = bench(tmp_path, trace, "--codec", "basic")
    assert report["sent_total"] == 0
    assert report["compression_ratio"] == "inf"


def test_bench_constant_gradient_sends_every_step(tmp_path):
    B = 4
    g = np.linspace(0.5, 3.0, 12).astype(np.float32)
    # every sample has gradient g: sum of g/B over B samples is g, squares sum to g^2/B
    sums = BatchGradientSums(g, g * g / B, B)
    trace = trace_file(tmp_path, [sums] * 10)
    report = bench(tmp_path, trace, "--codec", "basic", "--alpha", "1")
    assert report["sent_total"] == 10 * 12
    assert report["compression_ratio"] == 1.0


def test_bench_hybrid_vs_basic(tmp_path):
    rng = np.random.default_rng(0)
    records = []
    for _ in range(40):
        grads = (rng.normal(0.05, 1.0, size=(16, 200)) / 16).astype(np.float32)
        records.append(BatchGradientSums(grads.sum(0), (grads * grads).sum(0), 16))
    trace = trace_file(tmp_path, records)
    basic = bench(tmp_path, trace, "--codec", "basic", "--alpha", "1.5", "--group-sizes", "120,80")
    hybrid = bench(tmp_path, trace, "--codec", "hybrid", "--alpha", "1.5", "--tau", "0.2")
    strom = bench(tmp_path, trace, "--codec", "strom", "--tau", "0.2")
    assert hybrid["sent_total"] <= strom["sent_total"]
    # truncation of the largest values to 2^e costs up to one half
    assert basic["quantization_rel_error_max"] < 0.5
    for rep in (basic, hybrid, strom):
        assert 0 <= rep["outstanding_mass_relative"]


def test_bench_version_mismatch(tmp_path, capsys):
    path = tmp_path / "bad.bin"
    path.write_bytes(struct.pack("<I", 99))
    assert main(["codec-bench", "--trace", str(path), "--codec", "basic"]) == 3
    assert "version" in capsys.readouterr().err


def test_bench_needs_tau(tmp_path):
    zeros = np.zeros(4, np.float32)
    trace = trace_file(tmp_path, [BatchGradientSums(zeros, zeros, 2)])
    assert main(["codec-bench", "--trace", str(trace), "--codec", "strom"]) == 2
