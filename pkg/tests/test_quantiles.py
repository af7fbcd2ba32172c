import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankmfg.errors import AlphaOutOfRange, EmptySample, InvalidLaw, NegativeVariance, NonFiniteSample
from rankmfg.quantiles import (
    GriddedLaw,
    empirical_quantile,
    gaussian_quantile,
    grid_quantile,
    order_statistic_rank,
    std_normal_quantile,
)

# bisection on math.erf to 200 halvings
X95 = 1.6448536269514715
PHI_X95 = 0.10313564037537153


def _phi_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def test_std_normal_quantile_oracle():
    assert std_normal_quantile(0.95) == pytest.approx(X95, abs=1e-12)
    assert round(std_normal_quantile(0.95), 6) == 1.644854
    assert std_normal_quantile(0.5) == 0.0


@pytest.mark.parametrize("alpha", [1e-10, 0.01, 0.25, 0.7, 0.95, 0.999, 1 - 1e-10])
def test_std_normal_quantile_contract(alpha):
    x = std_normal_quantile(alpha)
    assert abs(_phi_cdf(x) - alpha) <= 1e-12
    if 1e-3 < alpha < 1 - 1e-3:
        assert std_normal_quantile(1 - alpha) == pytest.approx(-x, abs=1e-12)


def test_std_normal_quantile_rejects_endpoints():
    for a in (0.0, 1.0):
        with pytest.raises(AlphaOutOfRange):
            std_normal_quantile(a)


def test_gaussian_quantile():
    assert gaussian_quantile(0.0, 0.25, 0.95) == pytest.approx(0.5 * X95)
    assert round(gaussian_quantile(0.0, 0.25, 0.95), 6) == 0.822427
    assert gaussian_quantile(3.0, 0.0, 0.3) == 3.0
    assert gaussian_quantile(-1.2, 4.0, 0.5) == -1.2
    with pytest.raises(NegativeVariance):
        gaussian_quantile(0.0, -1.0, 0.5)


def test_empirical_quantile_examples():
    assert empirical_quantile([1, 2, 3, 4], 0.5) == 2
    assert empirical_quantile([1, 2, 3, 4], 0.95) == 4
    assert empirical_quantile([7], 0.01) == 7
    assert empirical_quantile([7], 0.99) == 7


def test_empirical_quantile_errors():
    with pytest.raises(EmptySample):
        empirical_quantile([], 0.5)
    with pytest.raises(NonFiniteSample):
        empirical_quantile([1.0, float("nan")], 0.5)
    with pytest.raises(NonFiniteSample):
        empirical_quantile([1.0, float("inf")], 0.5)


def _set_definition(values, alpha):
    """min { x_k : (1/N) #{j : x_j <= x_k} >= alpha } by enumeration."""
    n = len(values)
    return min(x for x in values if sum(1 for y in values if y <= x) / n >= alpha)


@pytest.mark.parametrize("n", range(1, 9))
def test_empirical_quantile_matches_set_definition(n):
    rng = np.random.default_rng(n)
    alphas = [round(0.1 * i, 1) for i in range(1, 10)]
    samples = [rng.normal(size=n), rng.integers(0, 3, size=n).astype(float)]
    samples += [np.array(p, dtype=float) for p in itertools.islice(itertools.permutations(range(n)), 6)]
    for values in samples:
        for a in alphas:
            assert empirical_quantile(values, a) == _set_definition(list(values), a)
            k = order_statistic_rank(n, a)
            assert empirical_quantile(values, a) == np.sort(values)[k - 1]


def test_order_statistic_rank_float_boundary():
    # 0.95 * 1000 evaluates to 950.0000000000001 in floating point
    assert order_statistic_rank(1000, 0.95) == 950
    assert order_statistic_rank(10, 0.7) == 7


def test_empirical_converges_to_gaussian():
    m = 10**6
    rng = np.random.default_rng(11)
    x = rng.normal(0.3, 0.5, size=m)
    a = 0.95
    dens = PHI_X95 / 0.5
    tol = 3 * math.sqrt(a * (1 - a) / m) / dens
    assert abs(empirical_quantile(x, a) - gaussian_quantile(0.3, 0.25, a)) <= tol


def _gauss_law(n=2001, lo=-4.0, hi=4.0, m=0.0, s=0.5):
    x = np.linspace(lo, hi, n)
    w = np.exp(-0.5 * ((x - m) / s) ** 2)
    return GriddedLaw(x, w / w.sum())


def test_grid_quantile_examples():
    x = np.linspace(0, 3, 7)
    mass = np.zeros(7)
    mass[3] = 1.0
    for a in (0.01, 0.5, 0.99):
        assert grid_quantile(GriddedLaw(x, mass), a) == 1.5
    n = 1000
    centres = (np.arange(n) + 0.5) / n
    uniform = GriddedLaw(centres, np.full(n, 1.0 / n))
    assert abs(grid_quantile(uniform, 0.25) - 0.25) <= 1.0 / n
    law = _gauss_law()
    assert abs(grid_quantile(law, 0.95) - 0.822427) <= 8.0 / 2000


def test_gridded_law_validation():
    with pytest.raises(InvalidLaw):
        GriddedLaw(np.array([0.0, 1.0]), np.array([0.5, 0.4]))
    with pytest.raises(InvalidLaw):
        GriddedLaw(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    with pytest.raises(InvalidLaw):
        GriddedLaw(np.array([0.0, 1.0]), np.array([1.5, -0.5]))
    with pytest.raises(InvalidLaw):
        grid_quantile(np.array([0.5, 0.5]), 0.5)


alphas = st.floats(min_value=1e-6, max_value=1 - 1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), alphas, alphas, st.floats(-1e3, 1e3))
def test_empirical_monotone_and_equivariant(values, a1, a2, c):
    lo, hi = sorted((a1, a2))
    assert empirical_quantile(values, lo) <= empirical_quantile(values, hi)
    shifted = empirical_quantile(np.asarray(values) + c, lo)
    # the same order statistic is selected, so only the rounding of x + c differs
    k = order_statistic_rank(len(values), lo)
    assert shifted == (np.sort(values) + c)[k - 1]


@settings(max_examples=60, deadline=None)
@given(alphas, alphas, st.floats(-50, 50), st.floats(0, 10))
def test_gaussian_monotone_and_equivariant(a1, a2, c, var):
    lo, hi = sorted((a1, a2))
    assert gaussian_quantile(0.0, var, lo) <= gaussian_quantile(0.0, var, hi)
    assert gaussian_quantile(c, var, lo) == pytest.approx(c + gaussian_quantile(0.0, var, lo), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(alphas, alphas, st.floats(-5, 5))
def test_grid_monotone_and_equivariant(a1, a2, c):
    lo, hi = sorted((a1, a2))
    law = _gauss_law(n=401)
    assert grid_quantile(law, lo) <= grid_quantile(law, hi)
    moved = GriddedLaw(law.x_grid + c, law.mass)
    assert grid_quantile(moved, lo) == pytest.approx(grid_quantile(law, lo) + c, abs=1e-9)
