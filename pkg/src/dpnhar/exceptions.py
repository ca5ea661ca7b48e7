"""Exception hierarchy.

Everything raised on purpose derives from :class:`DpnharError`. Input and
model validation failures are also ``ValueError`` so callers that only know
the standard library still catch them; I/O failures are also ``OSError``.
"""


class DpnharError(Exception):
    """Base class for all package errors."""


class ValidationError(DpnharError, ValueError):
    """Invalid input, configuration or model."""


class InvalidConfig(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DegenerateBox(ValidationError):
    pass


class BoxOutOfBounds(ValidationError):
    pass


class TooFewFrames(ValidationError):
    pass


class EmptySequence(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


class SequenceTooShort(ValidationError):
    pass


class NonFiniteObservation(ValidationError):
    pass


class TooLargeForEnumeration(ValidationError):
    pass


class NumericalFailure(DpnharError, ArithmeticError):
    """A forward pass produced -inf log-likelihood (variance collapse)."""


class IncompleteBank(ValidationError):
    pass


class MissingComponent(ValidationError):
    pass


class FingerprintMismatch(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class ClassMissing(ValidationError):
    pass


class SchemaVersionMismatch(ValidationError):
    pass


class CorruptModel(ValidationError):
    pass


class IoError(DpnharError, OSError):
    pass
