"""Exception hierarchy shared across the package."""


class AerogelFemError(Exception):
    """Base class for all package errors."""


class InvalidArgument(AerogelFemError, ValueError):
    pass


class SingularElement(AerogelFemError):
    pass


class AssemblyError(AerogelFemError):
    pass


class ConstraintConflict(AerogelFemError):
    pass


class SolverFailure(AerogelFemError):
    """Linear solve failed or produced an unacceptable residual."""

    def __init__(self, message, *, residual=None, time=None):
        super().__init__(message)
        self.residual = residual
        self.time = time


class NewtonFailure(SolverFailure):
    pass


class InvalidState(AerogelFemError, ValueError):
    pass


class InvalidInput(AerogelFemError, ValueError):
    pass


class InvalidProbe(AerogelFemError, ValueError):
    pass


class ConfigError(AerogelFemError):
    """Carries every violation found, not only the first."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class IoError(AerogelFemError, OSError):
    pass
