"""Finite-population Monte Carlo under a fixed feedback policy.

N agents follow dx = (gamma_t + b u(t, x)) dt + sigma dW with independent
noise, discretized by Euler-Maruyama on the configuration's time grid.  The
experiments here check what the limiting games predict about finite N: the
sample quantile concentrates around the limiting quantile at rate N^-1/2,
the realized cost approaches the limiting cost, and the empirical terminal
law matches the limiting Gaussian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from . import rng
from .errors import PathsNotStored, ValidationError
from .model import RunConfig, validate
from .quantiles import empirical_quantile
from .target import FbodeSolution, density_at_quantile, limiting_cost
from .threshold import PolicyGrid, ThresholdControl, terminal_cost as threshold_terminal_cost

__all__ = [
    "PopulationRun",
    "CostReport",
    "simulate_population",
    "realized_cost",
    "agent_costs",
    "quantile_samples",
    "clt_experiment",
    "rate_experiment",
    "nash_gap_experiment",
    "ks_experiment",
    "martingale_check",
    "loglog_slope",
]

# agents simulated together; bounds memory at ~ CHUNK_DRAWS doubles per buffer
CHUNK_DRAWS = 1 << 22


@dataclass(frozen=True, eq=False)
class PopulationRun:
    terminal_states: np.ndarray
    sample_quantile_T: float
    running_cost: np.ndarray
    seed: int
    replication: int
    alpha: float
    policy_tag: str
    paths: np.ndarray | None = None
    controls: np.ndarray | None = None

    @property
    def n_agents(self) -> int:
        return self.terminal_states.size

    def selected(self) -> np.ndarray:
        return self.terminal_states >= self.sample_quantile_T


@dataclass(frozen=True)
class CostReport:
    running_cost: float
    terminal_cost: float
    total: float
    formulation_tag: str


def _policy_tag(policy) -> str:
    if policy is None:
        return "zero"
    if isinstance(policy, FbodeSolution):
        return "target"
    if isinstance(policy, (PolicyGrid, ThresholdControl)):
        return "threshold"
    return getattr(policy, "tag", "custom")


def _stepper(policy, config: RunConfig) -> Callable[[int, np.ndarray], np.ndarray]:
    """u(t_j, x) as a function of the step index j."""
    times = config.grid.times
    p = config.params
    if policy is None:
        return lambda j, x: np.zeros_like(x)
    if isinstance(policy, FbodeSolution):
        # the equilibrium feedback is affine in x: precompute its coefficients
        eta = policy.interp("eta", times)
        qbar = policy.interp("qbar", times)
        phi = policy.interp("phi", times)
        slope = -(p.b / p.r) * eta
        icpt = (p.b / p.r) * (eta * qbar - phi)
        return lambda j, x: slope[j] * x + icpt[j]
    if isinstance(policy, PolicyGrid) and policy.u_star.shape[0] == times.size \
            and np.allclose(policy.time_grid.times, times, rtol=0, atol=1e-14):
        xc = policy.space_grid.centers
        return lambda j, x: np.interp(x, xc, policy.u_star[j])
    return lambda j, x: np.broadcast_to(np.asarray(policy(times[j], x), dtype=float), x.shape)


def simulate_population(config: RunConfig, policy=None, store_paths: bool = False,
                        replication: int = 0, n_agents: int | None = None,
                        chunk_agents: int | None = None) -> PopulationRun:
    """Simulate one population of ``n_agents`` (default ``config.n_agents``).

    ``policy`` is a feedback u(t, x): a :class:`FbodeSolution`, a
    :class:`PolicyGrid`, any vectorized callable, or ``None`` for zero effort.
    Results depend only on (config, seed, replication), never on
    ``chunk_agents``.
    """
    validate(config)
    n = config.n_agents if n_agents is None else int(n_agents)
    if n < 1:
        raise ValidationError("n_agents must be >= 1", field="n_agents")
    p = config.params
    grid = config.grid
    dt, n_steps = grid.dt, grid.n_steps
    gamma = np.asarray(p.gamma(grid.times[:-1]), dtype=float) * np.ones(n_steps)
    control = _stepper(policy, config)
    if chunk_agents is None:
        chunk_agents = max(1, CHUNK_DRAWS // rng.agent_block(n_steps))
    sdt = p.sigma * math.sqrt(dt)

    x_T = np.empty(n)
    running = np.empty(n)
    paths = np.empty((n_steps + 1, n)) if store_paths else None
    controls = np.empty((n_steps, n)) if store_paths else None
    for lo in range(0, n, chunk_agents):
        hi = min(n, lo + chunk_agents)
        z = rng.agent_normals(config.seed, replication, lo, hi - lo, n_steps)
        x = p.m0 + p.nu * z[0]
        acc = np.zeros(hi - lo)
        if store_paths:
            paths[0, lo:hi] = x
        for j in range(n_steps):
            u = control(j, x)
            acc += u * u
            if store_paths:
                controls[j, lo:hi] = u
            x = x + (gamma[j] + p.b * u) * dt + sdt * z[j + 1]
            if store_paths:
                paths[j + 1, lo:hi] = x
        x_T[lo:hi] = x
        running[lo:hi] = 0.5 * p.r * dt * acc
    return PopulationRun(terminal_states=x_T, sample_quantile_T=empirical_quantile(x_T, config.alpha),
                         running_cost=running, seed=config.seed, replication=replication,
                         alpha=config.alpha, policy_tag=_policy_tag(policy), paths=paths,
                         controls=controls)


def _terminal(x, q, lam, formulation):
    if formulation == "target":
        return 0.5 * lam * (np.asarray(x, dtype=float) - q) ** 2
    if formulation == "threshold":
        return threshold_terminal_cost(x, q, lam)
    raise ValueError(f"formulation must be 'target' or 'threshold', not {formulation!r}")


def realized_cost(run: PopulationRun, agent_index: int, config: RunConfig,
                  formulation: str = "target") -> CostReport:
    """Cost of one agent: left-endpoint running cost plus terminal cost
    measured against the run's own sample quantile."""
    if run.paths is None or run.controls is None:
        raise PathsNotStored("realized_cost needs a run simulated with store_paths=True")
    p = config.params
    u = run.controls[:, agent_index]
    running = float(0.5 * p.r * config.grid.dt * np.sum(u * u))
    term = float(_terminal(run.paths[-1, agent_index], run.sample_quantile_T, p.lam, formulation))
    return CostReport(running, term, running + term, formulation)


def agent_costs(run: PopulationRun, config: RunConfig, formulation: str = "target") -> np.ndarray:
    """Total realized cost of every agent (no stored paths needed)."""
    term = _terminal(run.terminal_states, run.sample_quantile_T, config.params.lam, formulation)
    return run.running_cost + term


def loglog_slope(ns, values) -> float:
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(values, float)), 1)[0])


@dataclass(frozen=True, eq=False)
class ReplicationBatch:
    """Per-replication summaries at one population size."""

    n_agents: int
    quantiles: np.ndarray
    mean_cost: np.ndarray
    first_agent_cost: np.ndarray


def quantile_samples(config: RunConfig, policy, n_agents: int | None = None,
                     n_replications: int | None = None, formulation: str = "target",
                     progress: Callable[[int], None] | None = None) -> ReplicationBatch:
    """Replication j uses stream (seed, j); returns sample quantiles and costs."""
    n = config.n_agents if n_agents is None else int(n_agents)
    reps = config.n_replications if n_replications is None else int(n_replications)
    q = np.empty(reps)
    mean_cost = np.empty(reps)
    first = np.empty(reps)
    for j in range(reps):
        run = simulate_population(config, policy, replication=j, n_agents=n)
        c = agent_costs(run, config, formulation)
        q[j] = run.sample_quantile_T
        mean_cost[j] = c.mean()
        first[j] = c[0]
        if progress is not None:
            progress(j)
    return ReplicationBatch(n, q, mean_cost, first)


def clt_experiment(config: RunConfig, policy, qbar_T: float, p_at_q: float,
                   batch: ReplicationBatch | None = None) -> dict:
    """Spread of the sample quantile against the limiting prediction.

    Compares the empirical sd with both sqrt(a(1-a)/N)/p (classical sample
    quantile CLT) and sqrt(a(1-a)/N)/sqrt(p), and reports which is closer.
    """
    reps = config.n_replications if batch is None else batch.quantiles.size
    if reps < 100:
        raise ValidationError("clt_experiment needs at least 100 replications", field="n_replications")
    batch = batch or quantile_samples(config, policy)
    q = batch.quantiles
    n, a = batch.n_agents, config.alpha
    mean, sd = float(q.mean()), float(q.std(ddof=1))
    se = sd / math.sqrt(q.size)
    base = math.sqrt(a * (1 - a) / n)
    classical, literal = base / p_at_q, base / math.sqrt(p_at_q)
    ratio_c, ratio_l = sd / classical, sd / literal
    return {
        "n_agents": n,
        "n_replications": int(q.size),
        "qbar_T": float(qbar_T),
        "mean": mean,
        "sd": sd,
        "se": se,
        "z_mean": (mean - qbar_T) / se if se > 0 else 0.0,
        "mean_within_3se": abs(mean - qbar_T) <= 3 * se,
        "sd_classical": classical,
        "sd_literal": literal,
        "ratio_classical": ratio_c,
        "ratio_literal": ratio_l,
        "closer_scaling": "classical" if abs(math.log(ratio_c)) <= abs(math.log(ratio_l)) else "literal",
        "sd_within_15pct_classical": abs(ratio_c - 1) <= 0.15,
    }


def rate_experiment(batches: list[ReplicationBatch]) -> dict:
    """Log-log slope of the sample-quantile sd against N."""
    ns = [b.n_agents for b in batches]
    sds = [float(b.quantiles.std(ddof=1)) for b in batches]
    return {"N": ns, "sd": sds, "slope": loglog_slope(ns, sds)}


def nash_gap_experiment(config: RunConfig, solution: FbodeSolution, N_values=(250, 1000, 4000),
                        batches: list[ReplicationBatch] | None = None) -> dict:
    """Finite-N cost under the equilibrium policy versus the limiting cost.

    The finite-N cost is averaged over every agent of every replication
    (agents are exchangeable, so each agent's expected cost is agent 1's);
    the agent-1-only estimate is reported alongside.
    """
    limit = limiting_cost(solution)["total"]
    if batches is None:
        batches = [quantile_samples(config, solution, n_agents=n) for n in N_values]
    rows = []
    for b in batches:
        j_hat = float(b.mean_cost.mean())
        se = float(b.mean_cost.std(ddof=1) / math.sqrt(b.mean_cost.size))
        j1 = float(b.first_agent_cost.mean())
        rows.append({"N": b.n_agents, "J_N": j_hat, "se": se, "gap": abs(j_hat - limit),
                     "signed_gap": j_hat - limit, "J_N_agent1": j1,
                     "se_agent1": float(b.first_agent_cost.std(ddof=1) / math.sqrt(b.first_agent_cost.size))})
    gaps = [r["gap"] for r in rows]
    slope = loglog_slope([r["N"] for r in rows], gaps) if min(gaps) > 0 else float("nan")
    return {"J_limit": limit, "rows": rows, "slope": slope}


def ks_experiment(config: RunConfig, solution: FbodeSolution, n_replications: int = 200,
                  level: float = 0.99) -> dict:
    """Kolmogorov-Smirnov distance of terminal states to N(m_T, v_T)."""
    n = config.n_agents
    m_T, v_T = float(solution.m[-1]), float(solution.v[-1])
    crit = float(stats.kstwo.ppf(level, n))
    d = np.empty(n_replications)
    for j in range(n_replications):
        run = simulate_population(config, solution, replication=j)
        d[j] = stats.kstest(run.terminal_states, "norm", args=(m_T, math.sqrt(v_T))).statistic
    frac = float(np.mean(d < crit))
    return {"n_agents": n, "n_replications": n_replications, "critical": crit,
            "statistics": d, "fraction_below": frac}


def martingale_check(control: ThresholdControl, config: RunConfig, checkpoints,
                     n_paths: int = 10_000, replication: int = 0) -> list[dict]:
    """Martingale property of the adjoint y = -(r/b) u* along optimal paths.

    For each checkpoint (t, x), ``n_paths`` Euler paths start at x at time t
    under the exact best response; the sample mean of y_T is compared with
    y(t, x).  Checkpoint k draws its noise from replication
    ``replication + k``.
    """
    p = config.params
    grid = config.grid
    out = []
    for k, (t0, x0) in enumerate(checkpoints):
        j0 = int(round(t0 / grid.dt))
        if not math.isclose(j0 * grid.dt, t0, abs_tol=1e-12):
            raise ValueError(f"checkpoint t={t0} is not a grid node")
        steps = grid.n_steps - j0
        z = rng.agent_normals(config.seed, replication + k, 0, n_paths, steps)
        x = np.full(n_paths, float(x0))
        sdt = p.sigma * math.sqrt(grid.dt)
        for j in range(steps):
            t = grid.times[j0 + j]
            x = x + (p.gamma(t) + p.b * control(t, x)) * grid.dt + sdt * z[j + 1]
        y_T = control.adjoint(p.T, x)
        y0 = float(control.adjoint(t0, np.array([x0]))[0])
        se = float(y_T.std(ddof=1) / math.sqrt(n_paths))
        out.append({"t": float(t0), "x": float(x0), "y": y0, "mean_y_T": float(y_T.mean()), "se": se,
                    "z": (float(y_T.mean()) - y0) / se if se > 0 else 0.0})
    return out
