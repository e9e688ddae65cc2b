"""Exception hierarchy.

Every error raised by the package derives from :class:`ParamIdError` and
belongs to one of three classes, which the command line maps to distinct
exit codes: configuration problems, bad or insufficient data, and failures
during computation.
"""


class ParamIdError(Exception):
    """Base class for all package errors."""


class ConfigError(ParamIdError):
    """Invalid configuration, plan, or file layout."""


class DataError(ParamIdError):
    """Input data that cannot support the requested computation."""


class ComputeError(ParamIdError):
    """A computation that was set up correctly but did not succeed."""


class InvalidRuleError(ConfigError, ValueError):
    pass


class ShapeError(DataError, ValueError):
    pass


class DegenerateCurveError(DataError):
    pass


class ExtrapolationError(DataError, ValueError):
    pass


class UndefinedCorrelationError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class InvalidShapeError(ConfigError, ValueError):
    """Surrogate shape exponent outside its admissible range."""


class PlanError(ConfigError):
    pass


class EmptyBundleError(ComputeError):
    pass


class NoIntersectionError(ComputeError):
    """Coupled solve failed; ``best`` holds the closest candidate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ModelRunError(ComputeError):
    """A forward-model evaluation failed. ``kind`` names the failure mode."""

    kind = "model"


class ModelTimeoutError(ModelRunError):
    kind = "timeout"


class ModelExitError(ModelRunError):
    kind = "exit-code"

    def __init__(self, message, returncode=None):
        super().__init__(message)
        self.returncode = returncode


class ModelParseError(ModelRunError):
    kind = "parse"
