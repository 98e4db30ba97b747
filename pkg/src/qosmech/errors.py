"""Exception hierarchy shared across the package."""


class QosMechError(Exception):
    """Base class for all package errors."""


class DomainError(QosMechError, ValueError):
    """A probability (or report) lies outside the admissible domain."""


class ParameterError(QosMechError, ValueError):
    """Scheme or market parameters cannot support the requested computation."""


class EvaluationError(QosMechError, ArithmeticError):
    """An objective returned a non-finite value during a search."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class ConsistencyError(QosMechError, RuntimeError):
    """Two independent evaluation routes disagreed."""


class StateError(QosMechError, RuntimeError):
    """A stateful object (ledger) was driven out of order."""


class ConfigError(QosMechError, ValueError):
    """A run configuration is malformed or incomplete."""
