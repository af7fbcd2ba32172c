"""Command-line front end.

Each command resolves a configuration, runs one experiment and writes its
artifacts to a fresh directory ``<out>/<command>-<digest>``, where the digest
hashes every resolved input.  The directory holds the CSV tables, a
``summary.txt`` of headline numbers and a ``manifest.txt`` that records the
inputs plus a SHA-256 of each artifact.  Passing that manifest back through
``--manifest`` repeats the run and reproduces the same bytes.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, rng
from .artifacts import fresh_run_dir, input_digest, read_kv, sha256_file, write_csv, write_kv
from .errors import ConfigError, IoError, RankMFGError, SolverError, ValidationError
from .model import (
    CONFIG_KEYS,
    RunConfig,
    check_alpha,
    config_from_mapping,
    config_items,
    load_config,
    table1_defaults,
    validate,
)
from .population import (
    agent_costs,
    clt_experiment,
    nash_gap_experiment,
    quantile_samples,
    rate_experiment,
    simulate_population,
)
from .target import density_at_quantile, limiting_cost, nash_error_estimate, solve_fbode
from .threshold import FixedPointConfig, fixed_point_solve

log = logging.getLogger("rankmfg")

COMMANDS = ("solve-target", "solve-threshold", "simulate", "clt-check", "nash-check",
            "sweep-alpha", "compare-formulations")
DEFAULT_ALPHAS = (0.25, 0.5, 0.75, 0.9, 0.95)
DEFAULT_N_LIST = (250, 1000, 4000)


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    config: RunConfig
    output_dir: Path
    formulation: str = "target"
    alpha_list: tuple = ()
    N_list: tuple = ()
    fixed_point: FixedPointConfig = field(default_factory=FixedPointConfig)
    start: str = "warm"
    time_stride: int = 10

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}", field="command")
        if self.formulation not in ("target", "threshold"):
            raise ConfigError(f"formulation must be target or threshold, not {self.formulation!r}",
                              field="formulation")
        for a in self.alpha_list:
            check_alpha(a, "alphas")
        if any(b <= a for a, b in zip(self.alpha_list, self.alpha_list[1:])):
            raise ConfigError("alphas must be strictly increasing", field="alphas")
        if any(int(n) < 2 for n in self.N_list):
            raise ConfigError("every entry of agents_list must be >= 2", field="agents_list")
        if self.time_stride < 1:
            raise ConfigError("time_stride must be >= 1", field="time_stride")

    def items(self) -> list[tuple[str, str]]:
        """Every resolved input as flat key = value pairs."""
        fp = self.fixed_point
        out = [("command", self.command), ("formulation", self.formulation),
               ("alphas", ",".join(repr(a) for a in self.alpha_list)),
               ("agents_list", ",".join(str(n) for n in self.N_list)),
               ("time_stride", str(self.time_stride)), ("fp_delta", repr(fp.delta)),
               ("fp_rho", repr(fp.rho)), ("fp_max_iterations", str(fp.max_iterations)),
               ("fp_start", self.start)]
        return out + config_items(self.config)


# --- command bodies: each returns (tables, summary items) ------------------------

def _target(spec):
    sol = solve_fbode(spec.config)
    cost = limiting_cost(sol)
    x_a = sol.x_alpha
    resid = float(np.max(np.abs(sol.qbar - (sol.m + x_a * np.sqrt(sol.v)))))
    summary = [("qbar_0", sol.qbar[0]), ("qbar_T", sol.qbar[-1]), ("m_T", sol.m[-1]), ("v_T", sol.v[-1]),
               ("density_at_qbar_T", density_at_quantile(sol)),
               ("nash_error_estimate", nash_error_estimate(sol, spec.config, spec.config.n_agents)),
               ("riccati_error", float(np.max(np.abs(sol.eta_rk4 - sol.eta)))),
               ("pi_error", float(np.max(np.abs(sol.pi_rk4 + sol.eta)))),
               ("consistency_residual", resid), ("limiting_cost_running", cost["running"]),
               ("limiting_cost_terminal", cost["terminal"]), ("limiting_cost_total", cost["total"])]
    return sol, {"target_paths.csv": sol.as_columns()}, summary


def _threshold(spec, config=None):
    config = config or spec.config
    res = fixed_point_solve(config, spec.fixed_point, start=spec.start)
    tr = res.trace
    tables = {"threshold_trace.csv": {
        "iteration": np.array([r.iteration for r in tr], dtype=np.int64),
        "q_candidate": np.array([r.q_candidate for r in tr]),
        "q_mapped": np.array([r.q_mapped for r in tr]),
        "residual": np.array([r.residual for r in tr])}}
    times = config.grid.times
    dens = res.density
    tables["threshold_qbar.csv"] = {"t": times, "qbar": res.qbar, "mean": dens.mean(),
                                    "variance": dens.variance()}
    rows = np.arange(0, times.size, spec.time_stride)
    if rows[-1] != times.size - 1:
        rows = np.append(rows, times.size - 1)
    xc = res.policy.space_grid.centers
    tt = np.repeat(times[rows], xc.size)
    xx = np.tile(xc, rows.size)
    tables["threshold_policy.csv"] = {"t": tt, "x": xx, "u": res.policy.u_star[rows].ravel()}
    tables["threshold_density.csv"] = {"t": tt, "x": xx, "p": dens.p[rows].ravel()}
    summary = [("q_T", res.q_T), ("iterations", res.iterations), ("final_residual", tr[-1].residual),
               ("start", res.start), ("space_cells", xc.size), ("x_min", res.policy.space_grid.x_min),
               ("x_max", res.policy.space_grid.x_max),
               ("max_mass_error", float(np.max(np.abs(dens.mass_error))))]
    return res, tables, summary


def _policy(spec):
    if spec.formulation == "target":
        sol = solve_fbode(spec.config)
        return sol, float(sol.qbar[-1]), density_at_quantile(sol)
    res = fixed_point_solve(spec.config, spec.fixed_point, start=spec.start)
    law = res.density.law(-1)
    i = int(np.searchsorted(law.x_grid, res.q_T))
    return res.policy, res.q_T, float(law.mass[min(i, law.mass.size - 1)] / res.policy.space_grid.dx)


def _simulate(spec):
    policy, qbar_T, _ = _policy(spec)
    cfg = spec.config
    run = simulate_population(cfg, policy)
    costs = agent_costs(run, cfg, spec.formulation)
    tables = {"agents.csv": {"agent": np.arange(run.n_agents, dtype=np.int64), "x_T": run.terminal_states,
                             "selected": run.selected()}}
    summary = [("formulation", spec.formulation), ("limiting_quantile", qbar_T),
               ("sample_quantile_T", run.sample_quantile_T), ("selected", int(run.selected().sum())),
               ("mean_terminal_state", float(run.terminal_states.mean())),
               ("mean_cost", float(costs.mean()))]
    return tables, summary


def _clt(spec):
    policy, qbar_T, p_at_q = _policy(spec)
    cfg = spec.config
    batch = quantile_samples(cfg, policy, formulation=spec.formulation)
    rep = clt_experiment(cfg, policy, qbar_T, p_at_q, batch=batch)
    tables = {"replications.csv": {"replication": np.arange(batch.quantiles.size, dtype=np.int64),
                                   "N": np.full(batch.quantiles.size, batch.n_agents, dtype=np.int64),
                                   "sample_quantile_T": batch.quantiles}}
    summary = [("formulation", spec.formulation), ("density_at_quantile", p_at_q)]
    summary += [(k, v) for k, v in rep.items()]
    return tables, summary


def _nash(spec):
    cfg = spec.config
    sol = solve_fbode(cfg)
    batches = [quantile_samples(cfg, sol, n_agents=n) for n in spec.N_list]
    gap = nash_gap_experiment(cfg, sol, batches=batches)
    rate = rate_experiment(batches)
    reps = batches[0].quantiles.size
    tables = {"replications.csv": {
        "replication": np.tile(np.arange(reps, dtype=np.int64), len(batches)),
        "N": np.repeat(np.array(spec.N_list, dtype=np.int64), reps),
        "sample_quantile_T": np.concatenate([b.quantiles for b in batches])}}
    rows = gap["rows"]
    tables["nash_gap.csv"] = {k: np.array([r[k] for r in rows]) for k in
                              ("N", "J_N", "se", "gap", "signed_gap", "J_N_agent1", "se_agent1")}
    tables["nash_gap.csv"]["N"] = tables["nash_gap.csv"]["N"].astype(np.int64)
    tables["nash_gap.csv"]["quantile_sd"] = np.array(rate["sd"])
    summary = [("J_limit", gap["J_limit"]), ("nash_gap_slope", gap["slope"]),
               ("quantile_sd_slope", rate["slope"])]
    return tables, summary


def _sweep(spec):
    alphas = spec.alpha_list or DEFAULT_ALPHAS
    qt = np.array([solve_fbode(spec.config.replace(alpha=a)).qbar[-1] for a in alphas])
    res = [fixed_point_solve(spec.config.replace(alpha=a), spec.fixed_point, start=spec.start)
           for a in alphas]
    qh = np.array([r.q_T for r in res])
    cols = {"alpha": np.array(alphas), "qbar_T_target": qt, "q_T_threshold": qh,
            "iterations": np.array([r.iterations for r in res], dtype=np.int64)}
    summary = [("target_strictly_increasing", bool(np.all(np.diff(qt) > 0))),
               ("threshold_strictly_increasing", bool(np.all(np.diff(qh) > 0)))]
    return {"sweep_alpha.csv": cols}, summary


def _compare(spec):
    sol, t_tables, t_sum = _target(spec)
    res, h_tables, h_sum = _threshold(spec)
    qt, qh = float(sol.qbar[-1]), res.q_T
    rel = abs(qh - qt) / abs(qt)
    tables = {"compare_qbar.csv": {"t": sol.times, "qbar_target": sol.qbar, "qbar_threshold": res.qbar}}
    tables["threshold_trace.csv"] = h_tables["threshold_trace.csv"]
    summary = [("qbar_T_target", qt), ("q_T_threshold", qh), ("relative_difference", rel),
               ("within_2pct", rel <= 0.02), ("threshold_iterations", res.iterations)]
    return tables, summary


def execute(spec: ExperimentSpec):
    """Run ``spec`` and return (tables, summary items) without touching disk."""
    if spec.command == "solve-target":
        _, tables, summary = _target(spec)
    elif spec.command == "solve-threshold":
        _, tables, summary = _threshold(spec)
    elif spec.command == "simulate":
        tables, summary = _simulate(spec)
    elif spec.command == "clt-check":
        tables, summary = _clt(spec)
    elif spec.command == "nash-check":
        tables, summary = _nash(spec)
    elif spec.command == "sweep-alpha":
        tables, summary = _sweep(spec)
    else:
        tables, summary = _compare(spec)
    return tables, summary


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run(spec: ExperimentSpec) -> Path:
    """Execute and write artifacts; returns the run directory."""
    items = spec.items() + [("generator", rng.GENERATOR), ("package_version", __version__)]
    digest = input_digest(items)
    tables, summary = execute(spec)
    out = fresh_run_dir(spec.output_dir, f"{spec.command}-{digest[:12]}")
    artifacts = []
    for name, cols in tables.items():
        write_csv(out / name, cols)
        artifacts.append(name)
    write_kv(out / "summary.txt", [(k, _fmt(v)) for k, v in summary])
    artifacts.append("summary.txt")
    manifest = items + [("input_sha256", digest)]
    manifest += [(f"artifact.{name}.sha256", sha256_file(out / name)) for name in artifacts]
    write_kv(out / "manifest.txt", manifest)
    return out


# --- argument handling ----------------------------------------------------------

def _floats(text):
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rankmfg", description="Ranking quantilized mean-field games.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--manifest", type=Path, help="repeat the run recorded in a manifest.txt")
    ap.add_argument("--out", type=Path, default=Path("runs"), help="root directory for run outputs")
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--alphas", type=_floats, help="comma-separated quantile levels for sweep-alpha")
    ap.add_argument("--agents", type=int, help="population size N")
    ap.add_argument("--agents-list", type=_ints, help="population sizes for nash-check")
    ap.add_argument("--reps", type=int, help="number of replications")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--formulation", choices=("target", "threshold"))
    ap.add_argument("--start", choices=("warm", "cold"), help="threshold fixed-point initial iterate")
    ap.add_argument("--time-stride", type=int, help="export every k-th time slice of threshold grids")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _spec_from_manifest(path: Path, args) -> ExperimentSpec:
    kv = read_kv(path)
    if kv.get("command") != args.command:
        raise ConfigError(f"manifest records command {kv.get('command')!r}, not {args.command!r}",
                          field="command")
    cfg_kv = {k: v for k, v in kv.items() if k in CONFIG_KEYS}
    config = config_from_mapping(cfg_kv, table1_defaults(), root=path.parent)
    fp = FixedPointConfig(float(kv["fp_delta"]), int(kv["fp_max_iterations"]), float(kv["fp_rho"]))
    return ExperimentSpec(command=kv["command"], config=config, output_dir=args.out,
                          formulation=kv["formulation"], alpha_list=_floats(kv.get("alphas", "")),
                          N_list=_ints(kv.get("agents_list", "")), fixed_point=fp,
                          start=kv["fp_start"], time_stride=int(kv["time_stride"]))


def spec_from_args(args) -> ExperimentSpec:
    if args.manifest is not None:
        return _spec_from_manifest(args.manifest, args)
    config = load_config(args.config) if args.config else table1_defaults()
    changes = {}
    for flag, key in (("alpha", "alpha"), ("agents", "n_agents"), ("reps", "n_replications"),
                      ("seed", "seed")):
        if getattr(args, flag) is not None:
            changes[key] = getattr(args, flag)
    if changes:
        config = config.replace(**changes)
    validate(config)
    n_list = ()
    if args.command == "nash-check":
        n_list = args.agents_list or DEFAULT_N_LIST
    alphas = ()
    if args.command == "sweep-alpha":
        alphas = args.alphas or DEFAULT_ALPHAS
    return ExperimentSpec(command=args.command, config=config, output_dir=args.out,
                          formulation=args.formulation or "target", alpha_list=tuple(alphas),
                          N_list=tuple(n_list), start=args.start or "warm",
                          time_stride=args.time_stride or 10)


EXIT_CONFIG, EXIT_SOLVER, EXIT_IO, EXIT_OTHER = 2, 3, 4, 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        spec = spec_from_args(args)
        out = run(spec)
    except (ConfigError, ValidationError) as exc:
        print(f"rankmfg {args.command}: configuration error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"rankmfg {args.command}: solver error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except IoError as exc:
        print(f"rankmfg {args.command}: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RankMFGError as exc:
        print(f"rankmfg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    log.info("finished in %.1f s", time.perf_counter() - t0)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
