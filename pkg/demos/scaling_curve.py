"""Where the quadratic cost of temporal attention shows up.

Times one forward pass of each encoder variant while the number of
timestamps doubles, then fits a log-log slope.  Cross-time attention
builds sequences of length T*H*W, so doubling T quadruples the attention
work (slope approaching 2); encoding frames separately keeps sequences
flat and only the count grows (slope approaching 1).

Runs single-threaded for stable numbers; about a minute.
"""

from tempofuse import bench

cfg = bench.BenchConfig(reps=10, warmup=2, batch=2, H=12, W=12)
print(f"grid {cfg.H}x{cfg.W}, batch {cfg.batch}, d_model {cfg.d_model}, "
      f"{cfg.reps} reps per point\n")

results = bench.run_scaling(cfg)
for variant, r in results.items():
    print(f"== {variant} ==")
    t1 = r["table"].rows[0][1]
    for t, mean_ms, std_ms, _ in r["table"].rows:
        rel = mean_ms / t1
        print(f"  T={t:2d}  {mean_ms:8.2f} ms  (x{rel:5.1f})  "
              f"+- {std_ms:.2f}")
    print(f"  fitted exponent: {r['exponent']:.3f}\n")

e_t = results["temporal"]["exponent"]
e_l = results["late_fusion"]["exponent"]
print(f"temporal attention grows ~T^{e_t:.2f}, late fusion ~T^{e_l:.2f};")
print("the cross-time variant pays quadratically for the fusion it gets.")
