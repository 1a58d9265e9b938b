"""Exception hierarchy.

Every error raised by the package derives from :class:`ArhtError`, which
itself subclasses :class:`ValueError` so callers that only care about bad
input can keep catching the builtin.
"""


class ArhtError(ValueError):
    """Base class for all package errors."""


# hdtest
class DimensionMismatchError(ArhtError):
    pass


class InsufficientSamplesError(ArhtError):
    pass


class SingularCovarianceError(ArhtError):
    pass


class DimensionError(ArhtError):
    """Raised when n <= p for the classical Hotelling statistic."""


class NonPositiveLambdaError(ArhtError):
    pass


class DegenerateCorrectionError(ArhtError):
    """The (lambda, gamma) pair yields a non-positive correction term."""


class AllCandidatesDegenerateError(DegenerateCorrectionError):
    pass


# bnn
class NonFiniteLossError(ArhtError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


# detector
class InsufficientTestSamplesError(ArhtError):
    pass


class EmptyDatasetError(ArhtError):
    pass


class InvalidAlphaError(ArhtError):
    pass


class InvalidPValueError(ArhtError):
    pass


# evaluation
class DegenerateLabelsError(ArhtError):
    pass


class NoPositivesError(DegenerateLabelsError):
    pass


# data
class IdxFormatError(ArhtError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class DimensionOverflowError(IdxFormatError):
    pass
