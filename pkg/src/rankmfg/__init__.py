"""Ranking quantilized mean-field games.

Agents are ranked by terminal state and only those at or above the
population's alpha-quantile are rewarded.  Two limiting games are solved:
the target-based game, whose equilibrium reduces to ordinary differential
equations, and the threshold-based game, solved by a fixed point between a
control problem and the evolution of the population law.  Finite-population
simulation checks both against their limits.
"""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import GammaSchedule, ModelParams, RunConfig, TimeGrid, load_config, table1_defaults, validate
from .quantiles import GriddedLaw, empirical_quantile, gaussian_quantile, grid_quantile, std_normal_quantile
from .target import FbodeSolution, solve_fbode
from .threshold import FixedPointConfig, SpatialGrid, fixed_point_solve, solve_hjb, propagate_density
from .population import PopulationRun, CostReport, simulate_population, realized_cost
