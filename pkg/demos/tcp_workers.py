"""Run the workers as threads talking over localhost TCP and check the replicas."""
from vargrad import GateConfig, OptimizerConfig, RunConfig, train

run = RunConfig(workers=4, batch_size=16, epochs=3, seed=1, codec="basic",
                gate=GateConfig(alpha=1.5), optimizer=OptimizerConfig("momentum", 0.05, 0.9),
                dataset={"n_samples": 2000})

seq = train(run)
tcp = train(run.replace(transport="tcp"))

print("replicas agree at every step:", tcp.replicas_consistent)
print("tcp matches the sequential driver:", tcp.digests == seq.digests)
print(f"accuracy {tcp.final_accuracy:.4f}, compression {tcp.compression_ratio:.1f}")
