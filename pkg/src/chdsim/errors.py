"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised for malformed or physically inadmissible configuration input."""


class SolverError(RuntimeError):
    """Raised when a linear or nonlinear solve fails to converge.

    The ``substep`` attribute identifies which stage of a time step failed
    ("equilibrium", "cahn-hilliard", "damage").
    """

    def __init__(self, message: str, substep: str = ""):
        super().__init__(message)
        self.substep = substep


class VerificationError(RuntimeError):
    """Raised when a runtime invariant of the scheme is violated."""
