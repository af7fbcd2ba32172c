"""Target-rank equilibrium for the default inputs.

Solves the forward-backward system once, then prints the quantile path at a
few times, the terminal density at the quantile, the limiting cost and the
order-of-magnitude Nash error for a few population sizes.

    python3 demos/target_equilibrium.py
"""
from rankmfg import solve_fbode, table1_defaults
from rankmfg.target import density_at_quantile, limiting_cost, nash_error_estimate

cfg = table1_defaults()
sol = solve_fbode(cfg)

print("t      qbar      m         v")
for j in range(0, cfg.grid.n_steps + 1, cfg.grid.n_steps // 5):
    print(f"{sol.times[j]:.2f}  {sol.qbar[j]:.6f}  {sol.m[j]:.6f}  {sol.v[j]:.6f}")

p = density_at_quantile(sol)
print(f"\nterminal quantile {sol.qbar[-1]:.7f}, density there {p:.7f}")
cost = limiting_cost(sol)
print(f"limiting cost: running {cost['running']:.6f} + terminal {cost['terminal']:.6f} = {cost['total']:.6f}")
for n in (100, 1000, 10000):
    print(f"N = {n:>5}: Nash error estimate {nash_error_estimate(sol, cfg, n):.5f}")
