"""Exception hierarchy shared by all modules."""


class VesmcError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(VesmcError, ValueError):
    """Invalid user-supplied configuration (schedule, counts, file contents)."""


class InvariantViolation(VesmcError, ValueError):
    """A numerical invariant required by an operation does not hold."""


class DegenerateScheduleError(InvariantViolation):
    """Schedule has a zero inference std where a positive one is required."""


class IndexOrderError(VesmcError, ValueError):
    """Diffusion indices given in the wrong order or out of range."""


class DomainError(VesmcError, ValueError):
    """Argument outside the mathematical domain of the function."""


class ContractViolation(VesmcError, ValueError):
    """A user-supplied callable broke its interface contract."""


class DegenerateObservationError(VesmcError, ValueError):
    """Observation noise of zero where a density is required."""


class GuidanceInfeasibleError(VesmcError, ValueError):
    """Observation noise level cannot be matched by the noise schedule."""


class DegenerateWeightsError(VesmcError, RuntimeError):
    """All particle weights vanished."""


class SingularMomentsError(VesmcError, ValueError):
    """Covariance matrix is not invertible."""


class UndefinedScoreError(VesmcError, ValueError):
    """Score is undefined for the supplied data (e.g. constant target)."""
