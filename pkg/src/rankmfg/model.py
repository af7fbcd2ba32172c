"""Model coefficients, time discretization and run configuration.

Every solver in the package consumes a :class:`RunConfig`.  Instances are
frozen dataclasses, so a validated configuration can be shared freely between
workers.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    AlphaOutOfRange,
    ConfigError,
    DegenerateGrid,
    NegativeParameter,
    NonPositiveParameter,
    ValidationError,
)

__all__ = [
    "GammaSchedule",
    "ModelParams",
    "TimeGrid",
    "RunConfig",
    "check_alpha",
    "table1_defaults",
    "validate",
    "load_config",
    "config_items",
    "CONFIG_KEYS",
]


@dataclass(frozen=True)
class GammaSchedule:
    """Deterministic support schedule, piecewise constant in time.

    ``values[k]`` applies on ``[breaks[k], breaks[k+1])``; the last value
    extends to +inf.  A constant schedule is the special case of one piece.
    """

    breaks: tuple = (0.0,)
    values: tuple = (0.0,)
    source: str | None = None

    @classmethod
    def constant(cls, c: float) -> "GammaSchedule":
        return cls((0.0,), (float(c),))

    @classmethod
    def from_table(cls, path) -> "GammaSchedule":
        path = Path(path)
        try:
            data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
        except OSError as exc:
            raise ConfigError(f"cannot read gamma table {path}: {exc}", field="gamma_table") from exc
        if data.dtype.names is None or set(data.dtype.names) != {"t", "gamma"}:
            raise ConfigError("gamma table must have header 't,gamma'", field="gamma_table")
        data = np.atleast_1d(data)
        return cls(tuple(float(v) for v in data["t"]), tuple(float(v) for v in data["gamma"]), str(path))

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.breaks), t, side="right") - 1
        vals = np.asarray(self.values)[np.clip(idx, 0, len(self.values) - 1)]
        return vals if vals.ndim else float(vals)

    def integral(self, t0, t1):
        """Exact integral of the schedule from ``t0`` to ``t1`` (vectorized)."""
        return self._antideriv(t1) - self._antideriv(t0)

    def _antideriv(self, t):
        t = np.asarray(t, dtype=float)
        b = np.asarray(self.breaks)
        v = np.asarray(self.values)
        # cumulative integral at each break, measured from breaks[0]
        cum = np.concatenate([[0.0], np.cumsum(v[:-1] * np.diff(b))])
        idx = np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(v) - 1)
        out = cum[idx] + v[idx] * (t - b[idx])
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelParams:
    b: float = 0.5
    sigma: float = 0.5
    r: float = 0.1
    lam: float = 1.0
    T: float = 1.0
    m0: float = 0.0
    nu: float = 0.5
    gamma: GammaSchedule = field(default_factory=GammaSchedule)

    @property
    def k(self) -> float:
        """Feedback gain b^2/r that appears throughout the optimality system."""
        return self.b * self.b / self.r


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    alpha: float
    grid: TimeGrid
    seed: int = 2024
    n_agents: int = 1000
    n_replications: int = 1000

    def replace(self, **changes) -> "RunConfig":
        """Return a copy with top-level fields and/or model parameters changed.

        Keys that name a :class:`ModelParams` field are routed there, and a
        change of ``T`` or ``n_steps`` rebuilds the time grid.
        """
        pfields = {f.name for f in dataclasses.fields(ModelParams)}
        pchanges = {k: v for k, v in changes.items() if k in pfields}
        rest = {k: v for k, v in changes.items() if k not in pfields}
        params = dataclasses.replace(self.params, **pchanges) if pchanges else self.params
        n_steps = rest.pop("n_steps", self.grid.n_steps)
        grid = rest.pop("grid", TimeGrid(params.T, n_steps))
        return dataclasses.replace(self, params=params, grid=grid, **rest)


def check_alpha(alpha, field="alpha") -> float:
    try:
        a = float(alpha)
    except (TypeError, ValueError):
        raise AlphaOutOfRange(alpha, field) from None
    if not (0.0 < a < 1.0):
        raise AlphaOutOfRange(alpha, field)
    return a


def table1_defaults() -> RunConfig:
    """Reference parameter set of the venture-competition experiments.

    The initial law N(0, 0.25) is read as mean 0 and *variance* 0.25.
    """
    params = ModelParams(b=0.5, sigma=0.5, r=0.1, lam=1.0, T=1.0, m0=0.0, nu=0.5,
                         gamma=GammaSchedule.constant(0.0))
    return RunConfig(params=params, alpha=0.95, grid=TimeGrid(1.0, 1000),
                     seed=2024, n_agents=1000, n_replications=1000)


def _problems(config: RunConfig) -> list[ValidationError]:
    p = config.params
    out: list[ValidationError] = []
    for name in ("b", "sigma", "r", "lam", "T"):
        v = getattr(p, name)
        if not (np.isfinite(v) and v > 0):
            out.append(NonPositiveParameter("lambda" if name == "lam" else name, v))
    if not (np.isfinite(p.nu) and p.nu >= 0):
        out.append(NegativeParameter("nu", p.nu))
    if not np.isfinite(p.m0):
        out.append(ValidationError(f"m0 must be finite (got {p.m0!r})", field="m0"))
    try:
        check_alpha(config.alpha)
    except AlphaOutOfRange as exc:
        out.append(exc)
    g = config.grid
    if not isinstance(g.n_steps, (int, np.integer)) or g.n_steps < 1:
        out.append(DegenerateGrid("n_steps", f"must be a positive integer (got {g.n_steps!r})"))
    elif not math.isclose(g.T, p.T, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(p.T))):
        out.append(DegenerateGrid("T", f"grid horizon {g.T} differs from model horizon {p.T}"))
    gam = p.gamma
    if (len(gam.breaks) != len(gam.values) or len(gam.values) == 0
            or gam.breaks[0] > 0 or np.any(np.diff(gam.breaks) <= 0)):
        out.append(ValidationError("gamma schedule must have increasing breaks starting at or before 0",
                                   field="gamma"))
    elif not np.all(np.isfinite(gam.values)):
        out.append(ValidationError("gamma schedule must be bounded", field="gamma"))
    if not isinstance(config.n_agents, (int, np.integer)) or config.n_agents < 2:
        out.append(ValidationError(f"n_agents must be an integer >= 2 (got {config.n_agents!r})",
                                   field="n_agents"))
    if not isinstance(config.n_replications, (int, np.integer)) or config.n_replications < 1:
        out.append(NonPositiveParameter("n_replications", config.n_replications))
    if not isinstance(config.seed, (int, np.integer)) or not (0 <= config.seed < 2**64):
        out.append(ValidationError(f"seed must be a 64-bit unsigned integer (got {config.seed!r})",
                                   field="seed"))
    return out


def validate(config: RunConfig) -> RunConfig:
    """Return ``config`` unchanged if every invariant holds, else raise.

    A single violation is raised as its own exception type; several are
    bundled into one :class:`ValidationError` listing all of them.
    """
    problems = _problems(config)
    if len(problems) == 1:
        raise problems[0]
    if problems:
        msg = "; ".join(str(p) for p in problems)
        raise ValidationError(f"{len(problems)} invalid fields: {msg}", problems)
    return config


# --- plain-text key = value configuration files ---------------------------------

CONFIG_KEYS = ("b", "sigma", "r", "lambda", "T", "m0", "nu0_variance", "alpha", "n_steps",
               "n_agents", "n_replications", "seed", "gamma_constant", "gamma_table")
_INT_KEYS = {"n_steps", "n_agents", "n_replications", "seed"}


def parse_kv(lines: Iterable[str]) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", field=key)
        out[key] = value
    return out


def config_from_mapping(kv: dict[str, str], base: RunConfig | None = None,
                        root: Path | None = None) -> RunConfig:
    unknown = sorted(set(kv) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}", field=unknown[0])
    if "gamma_constant" in kv and "gamma_table" in kv:
        raise ConfigError("give either gamma_constant or gamma_table, not both", field="gamma_table")
    cfg = base or table1_defaults()
    vals = {}
    for key, text in kv.items():
        if key == "gamma_table":
            continue
        try:
            vals[key] = int(text) if key in _INT_KEYS else float(text)
        except ValueError:
            raise ConfigError(f"cannot parse {key} = {text!r}", field=key) from None
    changes = {}
    for key in ("b", "sigma", "r", "T", "m0"):
        if key in vals:
            changes[key] = vals[key]
    if "lambda" in vals:
        changes["lam"] = vals["lambda"]
    if "nu0_variance" in vals:
        if vals["nu0_variance"] < 0:
            raise NegativeParameter("nu0_variance", vals["nu0_variance"])
        changes["nu"] = math.sqrt(vals["nu0_variance"])
    if "gamma_constant" in vals:
        changes["gamma"] = GammaSchedule.constant(vals["gamma_constant"])
    if "gamma_table" in kv:
        path = Path(kv["gamma_table"])
        if root is not None and not path.is_absolute():
            path = root / path
        changes["gamma"] = GammaSchedule.from_table(path)
    for key in ("alpha", "n_steps", "n_agents", "n_replications", "seed"):
        if key in vals:
            changes[key] = vals[key]
    return validate(cfg.replace(**changes))


def load_config(path) -> RunConfig:
    """Load a :class:`RunConfig` from a flat ``key = value`` text file.

    Missing keys fall back to :func:`table1_defaults`; unknown keys raise
    :class:`ConfigError`.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return config_from_mapping(parse_kv(text.splitlines()), root=path.parent)


def config_items(config: RunConfig) -> list[tuple[str, str]]:
    """Serialize a config to the same flat keys :func:`load_config` accepts."""
    p = config.params
    items = [("b", repr(p.b)), ("sigma", repr(p.sigma)), ("r", repr(p.r)), ("lambda", repr(p.lam)),
             ("T", repr(p.T)), ("m0", repr(p.m0)), ("nu0_variance", repr(p.nu * p.nu)),
             ("alpha", repr(config.alpha)), ("n_steps", str(config.grid.n_steps)),
             ("n_agents", str(config.n_agents)), ("n_replications", str(config.n_replications)),
             ("seed", str(config.seed))]
    if p.gamma.source is not None:
        items.append(("gamma_table", p.gamma.source))
    elif p.gamma.is_constant:
        items.append(("gamma_constant", repr(p.gamma.values[0])))
    else:
        raise ConfigError("an inline piecewise gamma schedule cannot be written as a flat key; "
                          "load it from a gamma_table file", field="gamma")
    return items
