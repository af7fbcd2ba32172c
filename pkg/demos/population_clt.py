"""Finite populations under the target equilibrium policy.

Simulates 300 independent populations at a few sizes and compares the spread
of the realized alpha-quantile with the central-limit prediction
sqrt(alpha (1 - alpha) / N) / p.  About a minute.

    python3 demos/population_clt.py
"""
import math

from rankmfg import solve_fbode, table1_defaults
from rankmfg.population import loglog_slope, quantile_samples
from rankmfg.target import density_at_quantile

cfg = table1_defaults().replace(n_replications=300)
sol = solve_fbode(cfg)
p = density_at_quantile(sol)
a = cfg.alpha

sizes, sds = [], []
print("N      mean       sd        predicted")
for n in (100, 400, 1600):
    q = quantile_samples(cfg, sol, n_agents=n).quantiles
    sd = q.std(ddof=1)
    sizes.append(n)
    sds.append(sd)
    print(f"{n:<5}  {q.mean():.5f}  {sd:.5f}  {math.sqrt(a * (1 - a) / n) / p:.5f}")
print(f"\nlimit {sol.qbar[-1]:.5f}; log-log slope of sd {loglog_slope(sizes, sds):.3f} (expect -0.5)")
