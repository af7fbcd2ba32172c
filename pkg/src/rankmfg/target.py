"""Target-based limiting game: closed-form equilibrium via decoupled FBODEs.

With terminal cost (lambda/2)(x_T - q)^2 the optimal state is Gaussian and the
equilibrium quantile path solves a triangular system of ODEs:

    eta'  = k eta^2,                         eta_T = lambda
    pi    = -eta
    v'    = sigma^2 - 2 k eta v,             v_0   = nu^2
    phi'  = (sigma^2/2) X eta / sqrt(v),     phi_T = 0
    qbar' = gamma - k phi + (sigma^2/2) X / sqrt(v),   qbar_0 = m0 + nu X

with k = b^2/r and X the standard normal alpha-quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.stats import norm

from .errors import SolverError, TimeOutOfRange
from .model import RunConfig, validate
from .quantiles import std_normal_quantile

__all__ = [
    "FbodeSolution",
    "rk4",
    "riccati_eta",
    "solve_fbode",
    "mean_variance_paths",
    "theta_backward",
    "equilibrium_policy",
    "equilibrium_density",
    "density_at_quantile",
    "nash_error_estimate",
    "limiting_cost",
]

RICCATI_TOL = 1e-8


def rk4(f, y0, times):
    """Classical fixed-step Runge-Kutta 4 over the nodes ``times``.

    ``times`` may be decreasing, which integrates in reversed time.  Returns an
    array of shape ``(len(times),) + shape(y0)``.
    """
    times = np.asarray(times, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty((times.size,) + y.shape)
    out[0] = y
    for i in range(times.size - 1):
        t, h = times[i], times[i + 1] - times[i]
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
    return out


def riccati_eta(t, params):
    """Closed-form solution of eta' = k eta^2, eta_T = lambda."""
    return 1.0 / (1.0 / params.lam + params.k * (params.T - np.asarray(t, dtype=float)))


@dataclass(frozen=True, eq=False)
class FbodeSolution:
    times: np.ndarray
    eta: np.ndarray
    pi: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    qbar: np.ndarray
    m: np.ndarray
    theta: np.ndarray
    eta_rk4: np.ndarray
    pi_rk4: np.ndarray
    alpha: float
    x_alpha: float
    config: RunConfig

    @property
    def z(self) -> np.ndarray:
        """Martingale integrand of the adjoint, z_t = sigma * eta_t."""
        return self.config.params.sigma * self.eta

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def interp(self, name: str, t):
        """Linear interpolation of path ``name`` at time(s) ``t``."""
        t_arr = np.asarray(t, dtype=float)
        tol = 1e-12 * max(1.0, self.T)
        if np.any(t_arr < -tol) or np.any(t_arr > self.T + tol):
            raise TimeOutOfRange(f"t={t!r} outside [0, {self.T}]")
        return np.interp(t_arr, self.times, getattr(self, name))

    def control(self, t, x):
        """Equilibrium feedback u*(t, x) = -(b/r) (eta (x - qbar) + phi)."""
        p = self.config.params
        eta = self.interp("eta", t)
        qbar = self.interp("qbar", t)
        phi = self.interp("phi", t)
        return -(p.b / p.r) * (eta * (np.asarray(x, dtype=float) - qbar) + phi)

    __call__ = control

    def as_columns(self) -> dict[str, np.ndarray]:
        return {"t": self.times, "eta": self.eta, "pi": self.pi, "v": self.v,
                "phi": self.phi, "qbar": self.qbar, "m": self.m}


def _forward_system(params, x_alpha):
    k, s2 = params.k, params.sigma ** 2
    gamma = params.gamma

    def f(t, y):
        v, phi, qbar, m = y
        eta = 1.0 / (1.0 / params.lam + k * (params.T - t))
        g = gamma(t)
        shape = 0.5 * s2 * x_alpha / math.sqrt(v)
        theta = -eta * qbar + phi
        return np.array([
            s2 - 2.0 * k * eta * v,
            eta * shape,
            g - k * phi + shape,
            g - k * eta * m - k * theta,
        ])

    return f


def solve_fbode(config: RunConfig, riccati_tol: float = RICCATI_TOL) -> FbodeSolution:
    """Solve the target-based equilibrium system on the configuration's grid.

    eta is taken in closed form and cross-checked against a reversed-time RK4
    integration (sup-norm <= ``riccati_tol``).  v, phi, qbar and m are integrated
    together forward in time by RK4; the terminal condition phi_T = 0 is met
    by linear shooting on phi_0 (the phi equation does not involve phi, so one
    correction pass is exact).
    """
    validate(config)
    p = config.params
    if p.nu == 0.0:
        raise SolverError("solve_fbode: nu = 0 makes the quantile ODE singular at t = 0 "
                          "(X_alpha / sqrt(v_0)); use a positive initial spread")
    t = config.grid.times
    x_alpha = std_normal_quantile(config.alpha)

    eta = riccati_eta(t, p)
    back = rk4(lambda s, y: np.array([p.k * y[0] ** 2, p.k * y[1] ** 2 + 2.0 * p.k * y[0] * y[1]]),
               [p.lam, -p.lam], t[::-1])[::-1]
    eta_rk4, pi_rk4 = back[:, 0], back[:, 1]
    err = float(np.max(np.abs(eta_rk4 - eta)))
    if err > riccati_tol:
        raise SolverError(f"solve_fbode: Riccati integration disagrees with closed form by {err:.3e}")

    f = _forward_system(p, x_alpha)
    q0 = p.m0 + p.nu * x_alpha
    first = rk4(f, [p.nu ** 2, 0.0, q0, p.m0], t)
    path = rk4(f, [p.nu ** 2, -first[-1, 1], q0, p.m0], t)
    v, phi, qbar, m = path.T
    pi = -eta
    theta = pi * qbar + phi
    return FbodeSolution(times=t, eta=eta, pi=pi, v=v, phi=phi, qbar=qbar, m=m, theta=theta,
                         eta_rk4=eta_rk4, pi_rk4=pi_rk4, alpha=config.alpha, x_alpha=x_alpha,
                         config=config)


def mean_variance_paths(solution: FbodeSolution, config: RunConfig | None = None):
    """Re-integrate the population mean from theta alone; return (m, v).

    theta is read off the solution through a cubic spline so the check keeps
    fourth-order accuracy between grid nodes.
    """
    config = config or solution.config
    p = config.params
    t = solution.times
    theta = CubicSpline(t, solution.theta)

    def f(s, m):
        eta = 1.0 / (1.0 / p.lam + p.k * (p.T - s))
        return p.gamma(s) - p.k * eta * m - p.k * theta(s)

    m = rk4(f, p.m0, t)
    return m, solution.v.copy()


def theta_backward(solution: FbodeSolution) -> np.ndarray:
    """theta' = k eta theta - gamma eta, theta_T = -lambda qbar_T, integrated
    backward by RK4 independently of the pi/phi decomposition."""
    p = solution.config.params
    t = solution.times

    def f(s, th):
        eta = 1.0 / (1.0 / p.lam + p.k * (p.T - s))
        return p.k * eta * th - p.gamma(s) * eta

    return rk4(f, -p.lam * solution.qbar[-1], t[::-1])[::-1]


def equilibrium_policy(solution: FbodeSolution, t, x):
    return solution.control(t, x)


def equilibrium_density(solution: FbodeSolution, t):
    """(mean, variance) of the Gaussian law of the optimal state at time t."""
    return float(solution.interp("m", t)), float(solution.interp("v", t))


def density_at_quantile(solution: FbodeSolution) -> float:
    """p(T, qbar_T): terminal Gaussian density at the equilibrium quantile."""
    m, v = solution.m[-1], solution.v[-1]
    return float(norm.pdf(solution.qbar[-1], loc=m, scale=math.sqrt(v)))


def nash_error_estimate(solution: FbodeSolution, config: RunConfig | None, N: int) -> float:
    """Order-of-magnitude Nash error sqrt(alpha(1-alpha)/N) / p(T, qbar_T).

    Unit constant; this is a rate expression, not a bound.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    alpha = (config or solution.config).alpha
    return math.sqrt(alpha * (1.0 - alpha) / N) / density_at_quantile(solution)


def limiting_cost(solution: FbodeSolution) -> dict[str, float]:
    """Expected running, terminal and total cost of the representative agent
    under the equilibrium policy, from the Gaussian law of the state."""
    p = solution.config.params
    gap = solution.m - solution.qbar
    eu2 = (p.b / p.r) ** 2 * (solution.eta ** 2 * (solution.v + gap ** 2)
                              + 2.0 * solution.eta * solution.phi * gap + solution.phi ** 2)
    running = float(simpson(0.5 * p.r * eu2, x=solution.times))
    terminal = 0.5 * p.lam * float(solution.v[-1] + gap[-1] ** 2)
    return {"running": running, "terminal": terminal, "total": running + terminal}
