"""Exception hierarchy shared across the package."""


class CompCapsError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CompCapsError, ValueError):
    """Operand shapes do not agree."""


class DomainError(CompCapsError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class NonFiniteError(CompCapsError, ArithmeticError):
    """A forward or backward computation produced NaN or Inf."""


class ContractError(CompCapsError, ValueError):
    """A call violated a documented precondition."""


class ParameterError(CompCapsError, ValueError):
    """A configuration or hyper-parameter value is invalid."""


class NotFittedError(CompCapsError, RuntimeError):
    """A model was used before ``fit``."""


class LabelError(CompCapsError, ValueError):
    """A class label is out of range or unknown."""


class FormatError(CompCapsError, ValueError):
    """A file (WAV, checkpoint, manifest, config) is malformed."""


class InputTooShortError(CompCapsError, ValueError):
    """An audio clip is shorter than one analysis frame."""


class VersionError(FormatError):
    """A checkpoint was written by an unsupported format version."""
