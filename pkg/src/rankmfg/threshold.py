"""Threshold-based limiting game, solved numerically.

The terminal cost (lambda/2)(x - q)^2 1{x < q} depends on the population only
through the scalar terminal quantile q.  For fixed q the control problem is
linearized by the logarithmic transformation V = -(sigma^2 r / b^2) log w, which
turns the HJB equation into the backward heat equation

    w_t + gamma w_x + (sigma^2/2) w_xx = 0,   w(T, x) = exp(-kappa g(x)),

with kappa = b^2/(r sigma^2).  Hence w is a Gaussian-kernel expectation and the
optimal feedback is u*(t, x) = (sigma^2/b) d/dx log w(t, x).  The population
law is pushed forward by a conservative finite-volume Fokker-Planck scheme and
q is updated by damped fixed-point iteration on its terminal quantile.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import exprel
from scipy.stats import norm

from ._kernels import log_w_and_slope
from .errors import GridTooNarrow, MassLoss, NoConvergence, QuadratureUnderflow, ValidationError
from .model import RunConfig, TimeGrid, validate
from .quantiles import GriddedLaw, gaussian_quantile, grid_quantile

__all__ = [
    "SpatialGrid",
    "FixedPointConfig",
    "ThresholdControl",
    "PolicyGrid",
    "DensityGrid",
    "ThresholdSolution",
    "TraceRow",
    "terminal_cost",
    "solve_hjb",
    "propagate_density",
    "initial_law",
    "fixed_point_solve",
]

log = logging.getLogger(__name__)

# log of the smallest positive normal double
LOG_TINY = math.log(np.finfo(float).tiny)
MASS_TOL = 1e-6
RENORM_LOG_TOL = 1e-8


def terminal_cost(x, q, lam):
    """(lam/2)(x - q)^2 for x strictly below q, zero otherwise."""
    x = np.asarray(x, dtype=float)
    d = x - q
    out = np.where(d < 0, 0.5 * lam * d * d, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SpatialGrid:
    x_min: float
    x_max: float
    n_cells: int = 1024

    def __post_init__(self):
        if not (self.x_min < self.x_max) or self.n_cells < 2:
            raise ValidationError(f"bad spatial grid [{self.x_min}, {self.x_max}] x {self.n_cells}",
                                  field="space_grid")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    @staticmethod
    def required_span(config: RunConfig, q=None) -> tuple[float, float]:
        """Interval the grid must contain: the uncontrolled law +- 8 sd and,
        if given, the candidate quantile +- 6 sigma sqrt(T)."""
        p = config.params
        drift = p.gamma.integral(0.0, config.grid.times)
        half = 8.0 * math.sqrt(p.nu ** 2 + p.sigma ** 2 * p.T)
        lo, hi = p.m0 + float(np.min(drift)) - half, p.m0 + float(np.max(drift)) + half
        if q is not None:
            qs = np.atleast_1d(np.asarray(q, dtype=float))
            band = 6.0 * p.sigma * math.sqrt(p.T)
            lo, hi = min(lo, float(qs.min()) - band), max(hi, float(qs.max()) + band)
        return lo, hi

    @classmethod
    def covering(cls, config: RunConfig, quantiles=(), n_cells: int = 1024, pad: float = 0.05):
        lo, hi = cls.required_span(config, list(quantiles) or None)
        extra = pad * (hi - lo)
        return cls(lo - extra, hi + extra, n_cells)

    def check_support(self, config: RunConfig, q=None) -> None:
        lo, hi = self.required_span(config, q)
        if self.x_min > lo or self.x_max < hi:
            raise GridTooNarrow(f"spatial grid [{self.x_min:.4g}, {self.x_max:.4g}] does not cover "
                                f"the required support [{lo:.4g}, {hi:.4g}]")


@dataclass(frozen=True)
class FixedPointConfig:
    delta: float = 1e-4
    max_iterations: int = 50
    rho: float = 0.5

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError("delta must be > 0", field="delta")
        if not (0 < self.rho <= 1):
            raise ValidationError("rho must lie in (0, 1]", field="rho")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1", field="max_iterations")


class ThresholdControl:
    """Best response u*(t, x) to a fixed terminal threshold ``q_T``, evaluated
    pointwise by Gaussian-kernel quadrature (no space or time grid)."""

    def __init__(self, q_T: float, config: RunConfig, n_nodes: int = 32, half_width: float = 8.0):
        if not np.isfinite(q_T):
            raise ValueError("q_T must be finite")
        p = config.params
        self.q_T = float(q_T)
        self.config = config
        self.kappa = p.b ** 2 / (p.r * p.sigma ** 2)
        self._a = 0.5 * self.kappa * p.lam
        self._nodes, self._weights = np.polynomial.legendre.leggauss(n_nodes)
        self._half_width = float(half_width)

    def log_w(self, t: float, x):
        return self._evaluate(t, x)[0]

    def __call__(self, t: float, x):
        return self._evaluate(t, x)[1]

    def adjoint(self, t: float, x):
        """y(t, x) = -(r/b) u*(t, x)."""
        p = self.config.params
        return -(p.r / p.b) * self(t, x)

    def _evaluate(self, t, x):
        p = self.config.params
        x = np.asarray(x, dtype=float)
        flat = np.ascontiguousarray(x.ravel())
        tau = p.T - float(t)
        if tau < -1e-12 * p.T:
            raise ValueError(f"t={t} beyond horizon {p.T}")
        if tau <= 0.0:
            d = np.minimum(flat - self.q_T, 0.0)
            lw = -self._a * d * d
            slope = -2.0 * self._a * d
        else:
            shift = p.gamma.integral(float(t), p.T)
            sd = p.sigma * math.sqrt(tau)
            lw, slope = log_w_and_slope(flat, shift, sd, self.q_T, self._a, self._nodes,
                                        self._weights, self._half_width)
            if lw.min() < LOG_TINY:
                raise QuadratureUnderflow(
                    f"w(t={t:.4g}) falls to exp({lw.min():.1f}) below the representable range; "
                    "the spatial grid extends too far below the threshold")
        u = (p.sigma ** 2 / p.b) * slope
        return lw.reshape(x.shape), u.reshape(x.shape)


@dataclass(frozen=True, eq=False)
class PolicyGrid:
    time_grid: TimeGrid
    space_grid: SpatialGrid
    u_star: np.ndarray
    q_T: float
    config: RunConfig

    @property
    def y(self) -> np.ndarray:
        p = self.config.params
        return -(p.r / p.b) * self.u_star

    def __call__(self, t, x):
        """Feedback at (t, x): linear in x on the grid, linear between time slices."""
        times = self.time_grid.times
        s = float(np.clip(float(t) / self.time_grid.dt, 0, self.time_grid.n_steps))
        j = min(int(math.floor(s)), self.time_grid.n_steps - 1)
        w = s - j
        xc = self.space_grid.centers
        u = np.interp(x, xc, self.u_star[j])
        if w > 0:
            u = (1 - w) * u + w * np.interp(x, xc, self.u_star[j + 1])
        return u


@dataclass(frozen=True, eq=False)
class DensityGrid:
    time_grid: TimeGrid
    space_grid: SpatialGrid
    p: np.ndarray
    mass_error: np.ndarray

    def law(self, j: int) -> GriddedLaw:
        return GriddedLaw(self.space_grid.centers, self.p[j])

    def mean(self) -> np.ndarray:
        return self.p @ self.space_grid.centers

    def variance(self) -> np.ndarray:
        xc = self.space_grid.centers
        mu = self.mean()
        return self.p @ (xc ** 2) - mu ** 2

    def quantile_path(self, alpha: float) -> np.ndarray:
        return np.array([grid_quantile(self.law(j), alpha) for j in range(self.p.shape[0])])


class TraceRow(NamedTuple):
    iteration: int
    q_candidate: float
    q_mapped: float
    residual: float


@dataclass(frozen=True, eq=False)
class ThresholdSolution:
    q_T: float
    policy: PolicyGrid
    density: DensityGrid
    qbar: np.ndarray
    trace: list = field(default_factory=list)
    start: str = "warm"

    @property
    def iterations(self) -> int:
        return len(self.trace)


def solve_hjb(q_T: float, config: RunConfig, space_grid: SpatialGrid | None = None,
              n_nodes: int = 32) -> PolicyGrid:
    """Optimal feedback against threshold ``q_T`` on the space-time grid."""
    if space_grid is None:
        space_grid = SpatialGrid.covering(config, [q_T])
    space_grid.check_support(config, q_T)
    control = ThresholdControl(q_T, config, n_nodes=n_nodes)
    xc = space_grid.centers
    times = config.grid.times
    u = np.empty((times.size, xc.size))
    for j, t in enumerate(times):
        u[j] = control(t, xc)
    return PolicyGrid(config.grid, space_grid, u, float(q_T), config)


def initial_law(config: RunConfig, space_grid: SpatialGrid) -> np.ndarray:
    """Cell masses of N(m0, nu^2) on the grid (point mass when nu = 0)."""
    p = config.params
    if p.nu == 0:
        mass = np.zeros(space_grid.n_cells)
        idx = int(np.clip((p.m0 - space_grid.x_min) // space_grid.dx, 0, space_grid.n_cells - 1))
        mass[idx] = 1.0
        return mass
    mass = np.diff(norm.cdf(space_grid.edges, loc=p.m0, scale=p.nu))
    return mass / mass.sum()


def _flux_coefficients(a, diff, dx, scheme):
    """Face flux F = A p_left - B p_right for drift ``a`` at each face."""
    if scheme == "upwind":
        return np.maximum(a, 0.0) + diff / dx, np.maximum(-a, 0.0) + diff / dx
    # exponentially fitted (Scharfetter-Gummel) upwinding: B(z) = z / (e^z - 1)
    pe = a * dx / diff
    return (diff / dx) / exprel(-pe), (diff / dx) / exprel(pe)


def propagate_density(policy, config: RunConfig, space_grid: SpatialGrid | None = None,
                      scheme: str = "exponential") -> DensityGrid:
    """Push N(m0, nu^2) forward under drift gamma + b u* and diffusion sigma^2/2.

    Finite-volume scheme with zero-flux walls, upwinded face fluxes and
    backward-Euler time stepping.  ``scheme="exponential"`` uses
    exponentially fitted upwinding, which has no artificial diffusion for
    smooth drifts; ``scheme="upwind"`` is the first-order donor-cell flux.
    Columns of the step matrix sum to one, so mass is conserved to round-off.
    """
    if scheme not in ("exponential", "upwind"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if space_grid is None:
        space_grid = getattr(policy, "space_grid", None) or SpatialGrid.covering(config)
    p = config.params
    tg = config.grid
    xc = space_grid.centers
    faces = space_grid.edges[1:-1]
    dx, dt = space_grid.dx, tg.dt
    diff = 0.5 * p.sigma ** 2
    times = tg.times
    n = xc.size

    dens = np.empty((times.size, n))
    dens[0] = initial_law(config, space_grid)
    mass_error = np.zeros(times.size)
    u_grid = getattr(policy, "u_star", None)
    c = dt / dx
    ab = np.empty((3, n))
    for j in range(tg.n_steps):
        t1 = times[j + 1]
        if u_grid is not None and u_grid.shape == (times.size, n):
            u_face = 0.5 * (u_grid[j + 1, :-1] + u_grid[j + 1, 1:])
        else:
            u_face = np.asarray(policy(t1, faces), dtype=float) * np.ones(n - 1)
        a = p.gamma(t1) + p.b * u_face
        A, B = _flux_coefficients(a, diff, dx, scheme)
        ab[1] = 1.0
        ab[1, :-1] += c * A
        ab[1, 1:] += c * B
        ab[0, 0] = 0.0
        ab[0, 1:] = -c * B
        ab[2, :-1] = -c * A
        ab[2, -1] = 0.0
        new = solve_banded((1, 1), ab, dens[j])
        new = np.maximum(new, 0.0)
        total = new.sum()
        err = total - 1.0
        mass_error[j + 1] = err
        if abs(err) > MASS_TOL:
            raise MassLoss(f"slice {j + 1}: total mass {total!r} deviates from 1")
        if new[0] + new[-1] > MASS_TOL:
            raise MassLoss(f"slice {j + 1}: mass {new[0] + new[-1]:.3g} reached the grid walls; "
                           "widen the spatial grid")
        if abs(err) > RENORM_LOG_TOL:
            log.info("slice %d renormalized by %.3e", j + 1, err)
        dens[j + 1] = new / total
    return DensityGrid(tg, space_grid, dens, mass_error)


def fixed_point_solve(config: RunConfig, fp: FixedPointConfig | None = None,
                      space_grid: SpatialGrid | None = None, start: str = "warm",
                      q0: float | None = None, n_nodes: int = 32,
                      scheme: str = "exponential") -> ThresholdSolution:
    """Damped fixed-point iteration on the terminal quantile.

    q <- (1 - rho) q + rho Q(alpha, law of x*_T under the best response to q),
    stopping once successive iterates differ by less than ``delta``.  The
    returned quantile is the last candidate, the one the returned policy and
    density were computed for.

    ``start="warm"`` begins at the target-based equilibrium quantile,
    ``start="cold"`` at the alpha-quantile of the initial law; an explicit
    ``q0`` overrides both.
    """
    validate(config)
    fp = fp or FixedPointConfig()
    p = config.params
    cold = gaussian_quantile(p.m0, p.nu ** 2, config.alpha)
    if q0 is None:
        if start == "warm":
            from .target import solve_fbode
            q0 = float(solve_fbode(config).qbar[-1])
        elif start == "cold":
            q0 = cold
        else:
            raise ValueError(f"start must be 'warm' or 'cold', not {start!r}")
    else:
        start = "given"
    if space_grid is None:
        space_grid = SpatialGrid.covering(config, [q0, cold])

    q = float(q0)
    trace: list[TraceRow] = []
    for it in range(fp.max_iterations):
        policy = solve_hjb(q, config, space_grid, n_nodes=n_nodes)
        density = propagate_density(policy, config, space_grid, scheme=scheme)
        mapped = grid_quantile(density.law(-1), config.alpha)
        trace.append(TraceRow(it, q, mapped, abs(mapped - q)))
        q_next = (1.0 - fp.rho) * q + fp.rho * mapped
        log.debug("iteration %d: q=%.10f Q=%.10f", it, q, mapped)
        if abs(q_next - q) < fp.delta:
            qbar = density.quantile_path(config.alpha)
            return ThresholdSolution(q, policy, density, qbar, trace, start)
        q = q_next
    raise NoConvergence(f"no convergence within {fp.max_iterations} iterations "
                        f"(last residual {trace[-1].residual:.3e})", trace)
