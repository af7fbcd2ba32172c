import math

import numpy as np
import pytest
from scipy.stats import norm

from rankmfg.errors import GridTooNarrow, MassLoss, NoConvergence, QuadratureUnderflow
from rankmfg.model import GammaSchedule, table1_defaults
from rankmfg.quantiles import gaussian_quantile, grid_quantile
from rankmfg.threshold import (
    FixedPointConfig,
    SpatialGrid,
    ThresholdControl,
    fixed_point_solve,
    propagate_density,
    solve_hjb,
    terminal_cost,
)

Q = 1.827
# w(t, x) = E exp(-kappa g(x + sigma sqrt(T-t) Z)) for the default inputs, q = 1.827, by
# 30-digit adaptive quadrature split at q
W_FROZEN = {
    (0.0, 0.0): 0.00455366896273088731543842208245,
    (0.5, 1.0): 0.146826152859127804492915748075,
    (0.9, 2.5): 0.999999888561322871442256377563,
    (0.99, 1.7): 0.913008510052451598518532047291,
}


def w_closed(t, x, q, p):
    """Gaussian integral of exp(-a (y-q)^2 1{y<q}) against N(x + Gamma, s^2)."""
    a = 0.5 * p.b ** 2 / (p.r * p.sigma ** 2) * p.lam
    s = p.sigma * math.sqrt(p.T - t)
    d = np.asarray(x, dtype=float) + p.gamma.integral(t, p.T) - q
    prec = 2 * a + 1 / s ** 2
    centre = (d / s ** 2) / prec
    return norm.cdf(d / s) + np.exp(-a * d * d / (1 + 2 * a * s * s)) * norm.cdf(-centre * math.sqrt(prec)) / (
        s * math.sqrt(prec))


@pytest.fixture(scope="module")
def cfg():
    return table1_defaults()


@pytest.fixture(scope="module")
def coarse():
    return table1_defaults().replace(n_steps=200)


@pytest.fixture(scope="module")
def policy(cfg):
    return solve_hjb(Q, cfg)


def test_terminal_cost():
    assert terminal_cost(2.0, 2.0, 1.0) == 0.0
    assert terminal_cost(7.0, 2.0, 1.0) == 0.0
    assert terminal_cost(1.0, 2.0, 1.0) == 0.5
    assert np.allclose(terminal_cost(np.array([0.0, 3.0]), 1.0, 4.0), [2.0, 0.0])


def test_w_matches_frozen_quadrature(cfg):
    ctl = ThresholdControl(Q, cfg)
    for (t, x), w in W_FROZEN.items():
        assert math.exp(ctl.log_w(t, np.array([x]))[0]) == pytest.approx(w, rel=1e-10)
        assert float(w_closed(t, x, Q, cfg.params)) == pytest.approx(w, rel=1e-12)


def test_control_matches_closed_form(cfg):
    p = cfg.params
    ctl = ThresholdControl(Q, cfg)
    x = np.linspace(-4, 6, 801)
    h = 1e-5
    for t in (0.0, 0.3, 0.8, 0.99, 0.9999):
        lw = ctl.log_w(t, x)
        assert np.max(np.abs(np.exp(lw) / w_closed(t, x, Q, p) - 1)) < 1e-9
        du = (np.log(w_closed(t, x + h, Q, p)) - np.log(w_closed(t, x - h, Q, p))) / (2 * h)
        assert np.max(np.abs(ctl(t, x) - p.sigma ** 2 / p.b * du)) < 1e-7


def test_control_with_support_drift(cfg):
    moved = cfg.replace(gamma=GammaSchedule((0.0, 0.5), (0.4, -0.2)))
    ctl = ThresholdControl(Q, moved)
    x = np.linspace(-2, 3, 51)
    assert np.max(np.abs(np.exp(ctl.log_w(0.2, x)) / w_closed(0.2, x, Q, moved.params) - 1)) < 1e-9


def test_terminal_slice(cfg):
    p = cfg.params
    ctl = ThresholdControl(Q, cfg)
    x = np.array([Q - 1.0, Q, Q + 0.5])
    assert np.allclose(ctl(p.T, x), [(p.b / p.r) * p.lam * 1.0, 0.0, 0.0])


def test_adjoint_relation(policy, cfg):
    p = cfg.params
    assert np.array_equal(policy.y, -(p.r / p.b) * policy.u_star)


def test_policy_shape(policy, cfg):
    p = cfg.params
    u = policy.u_star
    x = policy.space_grid.centers
    times = cfg.grid.times
    assert u.min() >= 0.0
    below = x <= Q
    assert np.all(np.diff(u[:, below], axis=1) <= 0.0)
    tau = p.T - times
    far = (x[None, :] - Q) >= 6 * p.sigma * np.sqrt(tau)[:, None]
    assert np.max(u[far]) <= 1e-6
    # effort intensifies with time away from the kink; the last 1% of the
    # horizon is excluded, see test_intensification_fails_near_horizon
    deep = (x[None, :] <= Q - 2 * p.sigma * np.sqrt(tau)[:, None]) & (tau[:, None] >= 0.01)
    both = deep[:-1] & deep[1:]
    assert np.all(np.diff(u, axis=0)[both] >= 0.0)


def test_intensification_fails_near_horizon(cfg):
    """Just outside the 2 sigma sqrt(T-t) layer the exact best response can
    still decrease in t when T - t is small.  50-digit values of
    (sigma^2/b) d/dx log w at q - x = 0.0465227 are
    0.23224757366849841 at T-t = 0.002 and 0.23209326890775455 at T-t = 0.001."""
    ctl = ThresholdControl(Q, cfg)
    x = np.array([1.7804727779408154])
    early, late = ctl(0.998, x)[0], ctl(0.999, x)[0]
    assert early == pytest.approx(0.23224757366849841, rel=1e-9)
    assert late == pytest.approx(0.23209326890775455, rel=1e-9)
    assert Q - x[0] >= 2 * cfg.params.sigma * math.sqrt(0.002)
    assert late < early


def test_zero_terminal_weight_gives_zero_effort(cfg):
    u = ThresholdControl(Q, cfg.replace(lam=1e-12))(0.5, np.linspace(-3, 3, 11))
    assert np.max(np.abs(u)) < 1e-10


def test_policy_grid_interpolates(policy, cfg):
    ctl = ThresholdControl(Q, cfg)
    x = policy.space_grid.centers[::37]
    t = cfg.grid.times[250]
    assert np.allclose(policy(t, x), ctl(t, x), atol=1e-12)
    mid = 0.5 * (cfg.grid.times[250] + cfg.grid.times[251])
    assert np.allclose(policy(mid, x), ctl(mid, x), atol=1e-3)


def test_grid_too_narrow(cfg):
    with pytest.raises(GridTooNarrow):
        solve_hjb(Q, cfg, SpatialGrid(-1.0, 1.0, 64))


def test_quadrature_underflow(cfg):
    ctl = ThresholdControl(Q, cfg.replace(lam=1e4))
    with pytest.raises(QuadratureUnderflow):
        ctl(0.99, np.array([-30.0]))


def test_uncontrolled_diffusion_variance(coarse):
    grid = SpatialGrid.covering(coarse)
    dens = propagate_density(lambda t, x: 0.0, coarse, grid)
    p = coarse.params
    exact = p.nu ** 2 + p.sigma ** 2 * coarse.grid.times
    assert np.max(np.abs(dens.variance() / exact - 1)) <= 0.005
    assert np.max(np.abs(dens.mass_error)) <= 1e-6
    assert dens.p.min() >= 0.0


def test_constant_support_translates_mean(coarse):
    moved = coarse.replace(gamma=GammaSchedule.constant(0.7))
    grid = SpatialGrid.covering(moved)
    dens = propagate_density(lambda t, x: 0.0, moved, grid)
    assert np.allclose(dens.mean(), 0.7 * moved.grid.times, atol=1e-9)


@pytest.mark.parametrize("scheme", ["exponential", "upwind"])
def test_controlled_mass_conservation(coarse, scheme):
    pol = solve_hjb(Q, coarse)
    dens = propagate_density(pol, coarse, scheme=scheme)
    assert np.max(np.abs(dens.mass_error)) <= 1e-6
    assert dens.p.min() >= 0.0
    assert np.allclose(dens.p.sum(axis=1), 1.0, atol=1e-12)


def test_wall_leakage_detected(coarse):
    with pytest.raises(MassLoss):
        propagate_density(lambda t, x: 0.0, coarse, SpatialGrid(-0.6, 0.6, 100))


def test_gaussian_slice_quantile(coarse):
    grid = SpatialGrid.covering(coarse, n_cells=1024)
    dens = propagate_density(lambda t, x: 0.0, coarse, grid)
    assert abs(grid_quantile(dens.law(0), 0.95) - 0.822427) <= grid.dx


def test_fixed_point_without_terminal_weight(coarse):
    cfg = coarse.replace(lam=1e-9, gamma=GammaSchedule.constant(0.2))
    p = cfg.params
    res = fixed_point_solve(cfg, space_grid=SpatialGrid.covering(cfg, [2.0], n_cells=512))
    exact = gaussian_quantile(p.m0 + 0.2 * p.T, p.nu ** 2 + p.sigma ** 2 * p.T, cfg.alpha)
    assert res.q_T == pytest.approx(exact, abs=2e-3)


def test_fixed_point_warm_and_cold_agree(coarse):
    fp = FixedPointConfig()
    grid = SpatialGrid.covering(coarse, [0.8, 1.9], n_cells=512)
    warm = fixed_point_solve(coarse, fp, grid, start="warm")
    cold = fixed_point_solve(coarse, fp, grid, start="cold")
    assert abs(warm.q_T - cold.q_T) < fp.delta
    for res in (warm, cold):
        assert res.iterations <= fp.max_iterations
        assert abs(res.q_T - grid_quantile(res.density.law(-1), coarse.alpha)) <= fp.delta / fp.rho
        assert res.qbar[-1] == pytest.approx(grid_quantile(res.density.law(-1), coarse.alpha))
    assert cold.trace[0].q_candidate == pytest.approx(0.822427, abs=1e-6)


def test_no_convergence_carries_trace(coarse):
    with pytest.raises(NoConvergence) as info:
        fixed_point_solve(coarse, FixedPointConfig(max_iterations=2), start="cold")
    assert len(info.value.trace) == 2
    assert info.value.trace[1].q_candidate > info.value.trace[0].q_candidate


def test_fixed_point_config_validation():
    from rankmfg.errors import ValidationError
    for bad in (dict(delta=0.0), dict(rho=0.0), dict(rho=1.5), dict(max_iterations=0)):
        with pytest.raises(ValidationError):
            FixedPointConfig(**bad)
