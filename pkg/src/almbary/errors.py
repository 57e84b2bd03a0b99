"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters for scripted callers.
"""


class AlmbaryError(Exception):
    """Base class for all package errors."""


class ValidationError(AlmbaryError):
    """Malformed or inconsistent input (bad shapes, broken invariants)."""


class NumericalError(AlmbaryError):
    """A computation produced non-finite values or failed to converge."""


class ModelError(AlmbaryError):
    """A market-model assembly produced an invalid probability model."""


class SolverError(AlmbaryError):
    """The portfolio solve cannot proceed (ill-conditioned moments)."""


class InfeasibleError(SolverError):
    """The mean-surplus floor cannot be reached by any budget-feasible portfolio."""

    def __init__(self, message: str, best_surplus: float | None = None):
        super().__init__(message)
        self.best_surplus = best_surplus


class ExperimentError(AlmbaryError):
    """Too many replication failures inside an experiment cell."""
