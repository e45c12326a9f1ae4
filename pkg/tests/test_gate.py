from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from vargrad.core import BatchGradientSums, GateConfig, GradientStats, per_sample_sums
from vargrad.errors import ConfigurationError, DomainError
from vargrad.gate import criterion_via_variance, equivalent_alpha_prime, gate_step, should_send


def test_should_send_zero_variance_direction():
    # g = 1 for four samples: r = 1, v = 4 * (1/4)^2
    assert should_send(1.0, 0.25, 2.0)


def test_should_send_zero_mean_never():
    assert not should_send(0.0, 0.5, 2.0)


def test_should_send_one_to_four():
    assert should_send(2.5, 1.875, 2.0)  # 6.25 > 3.75


def test_should_send_ties_delay():
    assert not should_send(1.0, 0.5, 2.0)


def test_zero_variance_nonzero_residual_sends():
    assert should_send(1e-20, 0.0, 1e6)


def test_gate_step_sends_accumulated_value():
    sums = per_sample_sums([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]], 4)
    send, stats = gate_step(GradientStats.zeros(2), sums, GateConfig(alpha=2.0))
    assert send.indices.tolist() == [0]
    assert send.values.tolist() == [2.5]
    assert stats.r.tolist() == [0.0, 0.0]
    assert stats.v.tolist() == [0.0, 0.0]


def test_gate_step_zero_gradient():
    send, stats = gate_step(GradientStats.zeros(3), BatchGradientSums(np.zeros(3), np.zeros(3), 8),
                            GateConfig())
    assert len(send) == 0
    assert np.all(stats.v == 0)


def test_gate_step_two_step_trace():
    # hand trace, zeta = 0.5, alpha = 1.2
    # step 1: r = 0, v = 1 -> 0 > 1.2 fails, v -> 0.5
    # step 2: r = 1, v = 0.5 + 0.2 = 0.7 -> 1 > 0.84 sends 1.0
    # (without decay v would be 1.2 and 1 > 1.44 would fail)
    cfg = GateConfig(alpha=1.2, zeta=0.5)
    send, stats = gate_step(GradientStats.zeros(1), BatchGradientSums([0.0], [1.0], 4), cfg)
    assert len(send) == 0 and stats.v.tolist() == [0.5]
    send, stats = gate_step(stats, BatchGradientSums([1.0], [0.2], 4), cfg)
    assert send.values.tolist() == [1.0]
    assert stats.r.tolist() == [0.0] and stats.v.tolist() == [0.0]


def test_gate_step_sends_sum_not_mean():
    cfg = GateConfig(alpha=2.0, zeta=1.0)
    stats = GradientStats.zeros(1)
    sums = BatchGradientSums([0.125], [1.0], 4)
    for _ in range(128):
        send, stats = gate_step(stats, sums, cfg)
        assert len(send) == 0
    # (t/8)^2 > 2t first holds at t = 129; t = 128 is an exact tie and delays
    send, stats = gate_step(stats, sums, cfg)
    assert send.values.tolist() == [129 * 0.125]


def test_gate_step_rejects_tau():
    with pytest.raises(ConfigurationError):
        gate_step(GradientStats.zeros(1), BatchGradientSums([1.0], [1.0], 1), GateConfig(tau=0.1))


def test_state_hygiene():
    rng = np.random.default_rng(3)
    f32 = np.float32
    stats = GradientStats(rng.normal(size=50).astype(f32), rng.random(50).astype(f32))
    sums = BatchGradientSums(rng.normal(size=50).astype(f32), rng.random(50).astype(f32), 8)
    cfg = GateConfig(alpha=1.5, zeta=0.9)
    send, out = gate_step(stats, sums, cfg)
    sent = np.zeros(50, bool)
    sent[send.indices] = True
    assert np.all(out.r[sent] == 0) and np.all(out.v[sent] == 0)
    acc_v = stats.v + sums.sum_sq_mean
    np.testing.assert_array_equal(out.v[~sent], acc_v[~sent] * np.float32(0.9))
    np.testing.assert_array_equal(out.r[~sent], (stats.r + sums.sum_mean)[~sent])


def test_eventual_send_under_constant_signal():
    # closed form: after t steps r = t, v = 0.25 * (1 - zeta^t) / (1 - zeta)
    alpha, zeta = 8.0, 0.999
    expected = next(t for t in range(1, 10_000)
                    if t * t > alpha * 0.25 * (1 - zeta ** t) / (1 - zeta))
    assert expected == 2
    stats = GradientStats.zeros(1)
    sums = per_sample_sums(np.ones(4), 4)
    for t in range(1, 100):
        send, stats = gate_step(stats, sums, GateConfig(alpha=alpha, zeta=zeta))
        if len(send):
            break
    assert t == expected
    assert send.values[0] == 2.0


def test_eventual_send_needs_decay_when_alpha_large():
    # alpha >= B: zero-variance signal still sends, only via growth of r^2 vs v
    alpha, zeta = 40.0, 0.99
    stats = GradientStats.zeros(1)
    sums = per_sample_sums(np.ones(4), 4)
    steps = None
    for t in range(1, 1000):
        send, stats = gate_step(stats, sums, GateConfig(alpha=alpha, zeta=zeta))
        if len(send):
            steps = t
            break
    oracle = next(t for t in range(1, 1000) if t * t > alpha * 0.25 * (1 - zeta ** t) / (1 - zeta))
    assert steps == oracle


@pytest.mark.parametrize("alpha,b,expected", [
    (1.0, 64, 1.0),
    (2.0, 64, 2 * 63 / 62),
    (1.0, 2, 1.0),
])
def test_equivalent_alpha_prime(alpha, b, expected):
    assert equivalent_alpha_prime(alpha, b) == pytest.approx(expected, rel=1e-15)


def test_equivalent_alpha_prime_value():
    assert equivalent_alpha_prime(2.0, 64) == pytest.approx(2.0322580645, rel=1e-9)


@pytest.mark.parametrize("alpha,b", [(4.0, 4), (5.0, 4), (0.0, 4)])
def test_equivalent_alpha_prime_domain(alpha, b):
    with pytest.raises(DomainError):
        equivalent_alpha_prime(alpha, b)


def test_criterion_via_variance_examples():
    assert criterion_via_variance([1, 2, 3, 4], 2.0)
    assert not criterion_via_variance([1, -1], 1.0)
    assert not criterion_via_variance([1, -1], 1.9)


def test_criterion_via_variance_needs_two_samples():
    with pytest.raises(DomainError):
        criterion_via_variance([1.0], 1.0)


def _sums_form(samples, alpha):
    sums = per_sample_sums(samples, len(samples), dtype=np.float64)
    return bool(should_send(sums.sum_mean[0], sums.sum_sq_mean[0], alpha))


def test_oracle_agreement_random():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        b = int(rng.integers(2, 65))
        alpha = float(rng.uniform(1, min(2, b)))
        x = rng.normal(rng.normal(scale=0.5), 1.0, size=b)
        s1, s2 = x.sum(), (x * x).sum()
        if abs(s1 * s1 - alpha * s2) <= 1e-9 * max(s1 * s1, alpha * s2):
            continue
        assert criterion_via_variance(x, alpha) == _sums_form(x, alpha)


@given(st.lists(st.integers(-50, 50), min_size=2, max_size=12),
       st.fractions(min_value=Fraction(1, 10), max_value=Fraction(11, 1)))
@settings(max_examples=300)
def test_oracle_agreement_exact(samples, alpha):
    b = len(samples)
    assume(alpha < b)
    xs = [Fraction(s) for s in samples]
    sums_form = should_send(sum(x / b for x in xs), sum((x / b) ** 2 for x in xs), alpha)
    assert criterion_via_variance(xs, alpha, exact=True) == sums_form


@given(st.floats(-1e3, 1e3), st.floats(0, 1e3), st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_monotone_in_alpha(r, v, a1, a2):
    lo, hi = sorted((a1, a2))
    if should_send(r, v, hi):
        assert should_send(r, v, lo)


def test_send_implies_descent_estimate():
    # single batch, alpha >= 1: sending means mean^2 > alpha' var / B with alpha' >= 1
    rng = np.random.default_rng(5)
    for _ in range(500):
        b = int(rng.integers(3, 40))
        alpha = float(rng.uniform(1, 2))
        x = rng.normal(rng.normal(), 1.0, size=b)
        if _sums_form(x, alpha):
            a_prime = equivalent_alpha_prime(alpha, b)
            assert a_prime >= 1
            assert x.mean() ** 2 > a_prime * x.var(ddof=1) / b * (1 - 1e-9)
