"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 for I/O, 2 for
parse/validation problems, 3 for model/state problems.
"""


class ParavoxError(Exception):
    exit_code = 1


class IoError(ParavoxError):
    exit_code = 1


class MalformedWav(IoError):
    pass


class UnsupportedEncoding(IoError):
    pass


class ValidationError(ParavoxError):
    exit_code = 2


class EmptySignal(ValidationError):
    pass


class InvalidFrequency(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class MissingEndpoints(ParseError):
    pass


class CurveOutOfRange(ValidationError):
    pass


class OrderTooHigh(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class RateMismatch(ValidationError):
    pass


class EmptyReference(ValidationError):
    pass


class ManifestError(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class ModelError(ParavoxError):
    exit_code = 3


class ModelUntrained(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class IndexOutOfRange(ModelError):
    pass


class FormatError(ModelError):
    """A persisted model/bundle file is unreadable or has the wrong version."""
