"""Exception types shared across the package."""


class RetouchError(Exception):
    """Base class for all package-specific errors."""


class DecodeError(RetouchError):
    """Image file exists but cannot be decoded into an RGB raster."""


class ParamOutOfRangeError(RetouchError):
    """Filter parameter outside the allowed [-1, 1] interval."""


class ProgramParseError(RetouchError):
    """Text could not be parsed into a retouching program."""

    def __init__(self, message: str, reason: str = "invalid"):
        super().__init__(message)
        self.reason = reason


class DescriptionParseError(RetouchError):
    """Critic output contained no parseable aspect line."""


class InvalidDistributionError(RetouchError):
    """Probability vector is not normalized or not strictly positive."""


class EmptyReferenceSetError(RetouchError):
    """An operation requiring reference images received none."""


class BackendError(RetouchError):
    """A remote backend (chat or embedding) failed at the transport level."""


class AgentFailure(RetouchError):
    """All retry attempts for one agent call produced unusable output."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class ShapeMismatchError(RetouchError):
    """Two inputs that must share dimensions do not."""


class TooSmallError(RetouchError):
    """Image smaller than the minimum size an operation supports."""


class InsufficientDatasetError(RetouchError):
    """Dataset too small for the requested number of reference pairs."""


class WrongStateError(RetouchError):
    """Session operation invoked in a state that does not allow it."""
