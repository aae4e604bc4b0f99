"""Exception types raised across the package.

The CLI maps these onto exit codes: precondition and configuration problems
exit with 2, inconclusive numerics with 3.
"""


class HardyLabError(Exception):
    """Base class for all errors raised by hardylab."""


class PreconditionError(HardyLabError, ValueError):
    """An input violates a documented precondition."""


class SingularPointError(PreconditionError):
    """Evaluation requested at (or numerically on top of) a pole."""

    def __init__(self, message="singular point", point=None):
        super().__init__(message)
        self.point = point


class ConfigError(PreconditionError):
    """Malformed run configuration."""


class InconclusiveError(HardyLabError):
    """A numerical procedure could not reach a verdict."""


class SolverError(HardyLabError):
    """Linear algebra failure (e.g. no positive definite shift found)."""
