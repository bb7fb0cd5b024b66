"""Exception types shared across the package.

Every error carries a short machine-readable ``kind`` so the CLI can emit
structured error documents and map failures to exit codes.
"""


class FluidModelError(Exception):
    """Base class for domain errors raised by this package."""

    kind = "error"
    exit_code = 1


class InvalidScenarioError(FluidModelError):
    """Scenario violates a model precondition (e.g. non-idling at t=0)."""

    kind = "invalid_initial"
    exit_code = 2


class InvalidConfigError(FluidModelError):
    """Malformed or inconsistent run configuration."""

    kind = "invalid_config"
    exit_code = 2


class NumericalError(FluidModelError):
    """Numerical procedure failed to meet its accuracy contract."""

    kind = "numerical_failure"
    exit_code = 3


class FixedPointError(NumericalError):
    """Per-step fixed-point refinement did not converge (step too coarse)."""

    kind = "fixed_point_diverged"
    exit_code = 3


class ConsistencyError(NumericalError):
    """Two independent computations of the same quantity disagree."""

    kind = "consistency_check_failed"
    exit_code = 3


class NoEquilibriumError(FluidModelError):
    """The stationarity equation for the waiting time has no solution."""

    kind = "no_equilibrium"
    exit_code = 3
