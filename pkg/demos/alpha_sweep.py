"""Terminal quantile as the selected rank alpha varies, in both formulations.

The median case alpha = 0.5 keeps the target quantile on the mean path.
Takes a few minutes because each threshold point is its own fixed point.

    python3 demos/alpha_sweep.py
"""
import numpy as np

from rankmfg import fixed_point_solve, solve_fbode, table1_defaults

cfg = table1_defaults()
print("alpha  target    threshold")
for a in (0.25, 0.5, 0.75, 0.9, 0.95):
    c = cfg.replace(alpha=a)
    tgt = solve_fbode(c)
    thr = fixed_point_solve(c)
    print(f"{a:<5}  {tgt.qbar[-1]:.5f}  {thr.q_T:.5f}")

med = solve_fbode(cfg.replace(alpha=0.5))
print(f"\nmedian path: max |qbar - m0| = {np.abs(med.qbar - cfg.params.m0).max():.1e}")
