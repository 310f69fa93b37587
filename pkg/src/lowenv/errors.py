"""Exception hierarchy.

The CLI maps :class:`ConfigError` (and subclasses) to exit code 1 and every
other :class:`LowEnvError` to exit code 2.
"""


class LowEnvError(Exception):
    """Base class for all library errors."""


class ConfigError(LowEnvError):
    """Invalid configuration, arguments or input files."""


class DataError(ConfigError):
    """Input data violates a documented precondition (e.g. Neumann compatibility)."""


class DomainError(LowEnvError, ValueError):
    """Point outside the hold-all domain [0, 1]^d."""


class PreconditionError(LowEnvError, ValueError):
    """Operation called on inputs that do not satisfy its precondition."""


class DegenerateJunctionError(PreconditionError):
    """Jacobian of the tuple-point system is (numerically) singular."""


class StepSizeError(LowEnvError, ValueError):
    """Explicit time step violates the CFL restriction."""


class SolverError(LowEnvError):
    """Linear solve failed or the system is singular/indefinite."""


class GaugeError(SolverError):
    """Mixed solve requested without any Dirichlet node."""
