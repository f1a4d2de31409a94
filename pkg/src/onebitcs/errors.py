"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Bad shape, bad dimension, or a violated precondition."""


class DomainViolationError(ValueError):
    """Evaluation of a normalized model where the inner output norm is too small."""


class DivergedError(RuntimeError):
    """An iterative solver produced a non-finite objective or gradient.

    ``last_finite`` holds the last iterate whose objective and gradient were finite.
    """

    def __init__(self, message, last_finite=None):
        super().__init__(message)
        self.last_finite = last_finite


class InfeasibleError(RuntimeError):
    """A constrained program has no feasible point."""


class ResourceLimitError(RuntimeError):
    """A construction would exceed its point/memory budget."""


class ConfigError(ValueError):
    """An experiment configuration could not be loaded or validated."""
