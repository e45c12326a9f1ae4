import numpy as np
import pytest

from vargrad.costmodel import (CostModelInputs, allgatherv_time_bound, break_even_ratio,
                               predicted_speedup, ring_allreduce_time, speedup_lower_bound, sweep)
from vargrad.errors import DomainError


def test_ring_allreduce_example():
    assert ring_allreduce_time(CostModelInputs(p=2, N=1000, s=32, beta=1)) == 32_000


def test_ring_allreduce_asymptote_and_linearity():
    big = ring_allreduce_time(CostModelInputs(p=10**9, N=1000, s=32, beta=1))
    assert big == pytest.approx(2 * 1000 * 32, rel=1e-8)
    one = ring_allreduce_time(CostModelInputs(p=8, N=1000, s=32, beta=1))
    assert ring_allreduce_time(CostModelInputs(p=8, N=2000, s=32, beta=1)) == 2 * one


def test_ring_allreduce_needs_two_nodes():
    with pytest.raises(DomainError):
        ring_allreduce_time(CostModelInputs(p=1, N=10))


def test_allgatherv_example():
    inp = CostModelInputs(p=8, N=10**6, s=32, beta=1e-9, m=0, c=1000)
    assert allgatherv_time_bound(inp) == pytest.approx(2.56e-4, rel=1e-12)


def test_allgatherv_without_pipeline_term():
    inp = CostModelInputs(p=4, N=500, s=32, beta=2.0, m=0, c=10)
    assert allgatherv_time_bound(inp) == 500 * 32 * 4 * 2.0 / 10


def test_allgatherv_decreasing_in_c():
    vals = [allgatherv_time_bound(CostModelInputs(p=8, N=1000, m=64, c=c)) for c in (1, 2, 10, 1e3)]
    assert vals == sorted(vals, reverse=True)


def test_allgatherv_rejects_nonpositive_c():
    with pytest.raises(DomainError):
        allgatherv_time_bound(CostModelInputs(p=8, N=1000, c=0))


@pytest.mark.parametrize("p,c,expected", [(8, 100, 21.875), (2, 1, 0.5)])
def test_speedup_examples(p, c, expected):
    assert speedup_lower_bound(p, c) == expected


@pytest.mark.parametrize("p", [2, 3, 8, 64, 1024])
def test_half_p_is_below_break_even(p):
    assert speedup_lower_bound(p, p / 2) == pytest.approx((p - 1) / p, rel=1e-15)
    assert speedup_lower_bound(p, break_even_ratio(p)) == pytest.approx(1.0, rel=1e-15)


def test_speedup_monotone():
    cs = np.geomspace(1, 1e5, 30)
    assert np.all(np.diff([speedup_lower_bound(8, c) for c in cs]) > 0)
    assert np.all(np.diff([speedup_lower_bound(p, 100) for p in range(2, 200)]) < 0)


def test_predicted_speedup_from_measured_bytes():
    # every worker sends N*s/c bits -> same as the analytic bound
    p, N, s, c = 16, 10**6, 32, 400
    assert predicted_speedup(p, N, s, total_bits=p * N * s / c) == pytest.approx(
        speedup_lower_bound(p, c), rel=1e-12)


def test_sweep_rows():
    rows = sweep([8], [100], N=1000)
    assert rows[0]["speedup_bound"] == 21.875
    assert rows[0]["T_r"] / rows[0]["T_v_bound"] == pytest.approx(21.875, rel=1e-12)
