"""Exception hierarchy shared across the package.

Validation errors subclass ``ValueError`` so they play well with code that
catches standard exceptions; container parsing failures get their own branch
so callers can tell a malformed file apart from a bad argument.
"""


class BlockFSQError(Exception):
    """Base class for all package errors."""


class ValidationError(BlockFSQError, ValueError):
    """An argument or configuration violates a precondition."""


class NonFiniteDataError(ValidationError):
    """Data contains NaN or infinity where finite values are required."""


class ShapeMismatchError(ValidationError):
    """Array shapes are inconsistent with each other or with a config."""


class FormatError(BlockFSQError):
    """A container file is malformed."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FormatError):
    """File declares an unsupported format version."""


class TruncatedPayloadError(FormatError):
    """File ends before the header-declared payload is complete."""


class PayloadShapeError(FormatError):
    """Payload length disagrees with the header-declared shape."""


class TokenRangeError(FormatError, ValidationError):
    """A composite token index falls outside the declared code space."""


class MisalignedScheduleError(ValidationError):
    """Dropout targets and multi-rate supervision stages disagree."""


class MissingTermError(ValidationError):
    """A loss combiner is missing a term its schedule requires."""


class ProbeError(BlockFSQError):
    """The linear probe could not be fit or evaluated."""


class TrainingDivergedError(BlockFSQError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss!r}) at iteration {iteration}")
