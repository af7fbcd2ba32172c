"""Target against threshold: how the one-sided reward moves the quantile.

Agents above the threshold stop exerting effort, so the upper tail is not
pulled in and the terminal quantile lands higher than in the target game.

    python3 demos/compare_formulations.py
"""
import numpy as np

from rankmfg import fixed_point_solve, solve_fbode, table1_defaults

cfg = table1_defaults()
tgt = solve_fbode(cfg)
thr = fixed_point_solve(cfg)

print("t      target    threshold")
for j in range(0, cfg.grid.n_steps + 1, cfg.grid.n_steps // 10):
    print(f"{cfg.grid.times[j]:.2f}  {tgt.qbar[j]:.5f}  {thr.qbar[j]:.5f}")
rel = abs(thr.q_T - tgt.qbar[-1]) / tgt.qbar[-1]
print(f"\nterminal relative difference {100 * rel:.2f}%")
sd_thr = np.sqrt(thr.density.variance()[-1])
print(f"terminal sd: target {np.sqrt(tgt.v[-1]):.4f}, threshold {sd_thr:.4f}")
