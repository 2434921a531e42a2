"""Exception types shared across the toolkit.

Every error raised on bad input derives from :class:`NsrError`, so the CLI can
report ``type(exc).__name__`` and exit non-zero.
"""


class NsrError(Exception):
    pass


class ConfigError(NsrError, ValueError):
    pass


class InputTooShort(NsrError, ValueError):
    pass


class ShapeError(NsrError, ValueError):
    pass


class EmptyInput(NsrError, ValueError):
    pass


class InvalidLabel(NsrError, ValueError):
    pass


class NoAlignment(NsrError):
    pass


class TooLarge(NsrError):
    pass


class SemiringError(NsrError, ValueError):
    pass


class EmptyMachine(NsrError):
    pass


class RuleError(NsrError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyCorpus(NsrError, ValueError):
    pass


class NoPath(NsrError):
    pass


class MissingRef(NsrError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class TrainingDiverged(NsrError, FloatingPointError):
    pass


class FormatError(NsrError, ValueError):
    """A file did not match its documented binary or text layout."""
