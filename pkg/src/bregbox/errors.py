"""Exception types shared across the package."""


class GridMismatchError(ValueError):
    """Raised when a function lives on a different grid than expected."""


class InfeasibleError(ValueError):
    """Raised when a point violates the box constraints beyond tolerance."""


class NormalConeError(ValueError):
    """Raised when a supposed normal-cone element has the wrong signs."""


class ConstructionError(ValueError):
    """Raised by benchmark builders that refuse invalid parameters."""


class DataError(ValueError):
    """Raised when a metric series cannot be fitted."""


class ConfigError(ValueError):
    """Invalid experiment configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class SubproblemNotConverged(RuntimeError):
    """A subproblem solver hit its iteration cap.

    The best iterate seen so far is kept in ``best`` (a GridFunction) so the
    caller can decide whether to fall back to another solver.
    """

    def __init__(self, message, best=None, residual=None, iteration=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iteration = iteration
