"""Fluid-model solver and stochastic oracle for many-server queues with
generally distributed service and patience times."""

from .distributions import (Distribution, Erlang, Exponential, HyperExponential,
                            LogNormal, PiecewiseLinearCdf, Uniform, Weibull,
                            equilibrium_cdf, evaluate, patience_area,
                            patience_area_inverse, surviving_fraction)
from .equilibrium import (EquilibriumState, convergence_report, equilibrium_scenario,
                          equilibrium_state, limit_total, solve_w)
from .errors import (ConsistencyError, FixedPointError, FluidModelError,
                     InvalidConfigError, InvalidScenarioError, NoEquilibriumError,
                     NumericalError)
from .fluid import (FluidTrajectory, MeasureSnapshot, MeasureTail, Scenario,
                    buffer_content, buffer_measure, consistency_tol, entered_service,
                    entered_service_renewal, flows, pool_measure, solve, solve_full,
                    time_shift, validate_initial)
from .renewal import GridFunction, renewal_function, stieltjes_convolve
from .simulate import SimConfig, SimResult, SimSnapshot, discrepancy, simulate

__version__ = "0.1.0"
