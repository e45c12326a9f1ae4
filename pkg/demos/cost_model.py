"""When does sparse allgatherv beat a dense ring allreduce?"""
from vargrad.costmodel import break_even_ratio, speedup_lower_bound, sweep

for p in (4, 16, 64, 256):
    print(f"p={p:4d}: compression must exceed {break_even_ratio(p):7.2f}")

# Past the break-even point the guaranteed speedup grows linearly in c.
for row in sweep([16], [2, 8, 8.533, 16, 64, 256], N=10_000_000):
    print(f"c={row['c']:8.3f}  allreduce {row['T_r']:.4f}s  allgatherv <= {row['T_v_bound']:.4f}s"
          f"  speedup >= {row['speedup_bound']:.3f}")

print("p=8, c=100:", speedup_lower_bound(8, 100))
