"""How the variance gate delays noisy parameters and releases consistent ones."""
import numpy as np

from vargrad.core import GateConfig, GradientStats, per_sample_sums
from vargrad.gate import criterion_via_variance, equivalent_alpha_prime, gate_step

rng = np.random.default_rng(0)
B = 16

# Three parameters: a steady drift, a pure-noise one and a weak drift under noise.
means = np.array([1.0, 0.0, 0.1])
stats = GradientStats.zeros(3)
cfg = GateConfig(alpha=1.5, zeta=0.999)

for step in range(12):
    grads = rng.normal(means, 1.0, size=(B, 3))
    sums = per_sample_sums(grads, B)
    send, stats = gate_step(stats, sums, cfg)
    print(f"step {step:2d} sent {send.indices.tolist()!s:10} r={np.round(stats.r, 3)}")

# The gate is computed from running sums only, but it is the same decision as an
# explicit variance test with a rescaled alpha.
x = rng.normal(0.4, 1.0, size=B)
print("alpha' for alpha=1.5, B=16:", equivalent_alpha_prime(1.5, B))
print("variance form says send:", criterion_via_variance(x, 1.5))
s = per_sample_sums(x, B)
print("sums form says send:    ", bool(s.sum_mean[0] ** 2 > 1.5 * s.sum_sq_mean[0]))
