"""Train the same logistic regression with every codec and compare."""
import numpy as np

from vargrad import GateConfig, OptimizerConfig, RunConfig, train

base = RunConfig(workers=4, batch_size=16, epochs=10, seed=0, codec="none",
                 optimizer=OptimizerConfig("momentum", 0.05, 0.9))

runs = {"none": train(base)}
basic = train(base.replace(codec="basic", gate=GateConfig(alpha=1.5)), record_residuals=True)
runs["basic"] = basic

# Strom and the hybrid need a threshold; take the median residual seen by the gate.
tau = float(np.percentile(basic.residual_samples, 50))
runs["strom"] = train(base.replace(codec="strom", gate=GateConfig(tau=tau)))
runs["hybrid"] = train(base.replace(codec="hybrid", gate=GateConfig(alpha=1.5, tau=tau)))

print(f"tau = {tau:.4f}")
print(f"{'codec':8} {'accuracy':>9} {'ratio':>8} {'bytes':>10}")
for name, res in runs.items():
    print(f"{name:8} {res.final_accuracy:9.4f} {res.compression_ratio:8.1f} "
          f"{res.summary['bytes_on_wire']:10d}")
