"""Exception types shared across the package."""


class BeamshapeError(Exception):
    """Base class for library-specific failures."""


class InvalidGeometryError(ValueError, BeamshapeError):
    """Array geometry with non-positive element counts or spacing."""


class InfeasibleRankError(ValueError, BeamshapeError):
    """More RF chains requested than the channel rank supports."""


class MissingDictionaryError(ValueError, BeamshapeError):
    """Fully-connected factorization invoked without response atoms."""


class DegenerateCodebookError(ValueError, BeamshapeError):
    """All-zero codebook cannot be power-normalized."""


class ShapingFailureError(RuntimeError, BeamshapeError):
    """No feasible codebook found; carries the partial recursion state."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class NotComputedError(KeyError, BeamshapeError):
    """Requested report table was not produced by the experiment."""


class ConfigValidationError(ValueError, BeamshapeError):
    """Invalid experiment configuration; lists every violated field."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration: " + "; ".join(self.violations))
