"""Exception hierarchy. The CLI maps any LoptError to a nonzero exit code."""


class LoptError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(LoptError):
    pass


class NonScalarLossError(LoptError):
    pass


class SequenceOverflowError(LoptError):
    pass


class FrozenStateError(LoptError):
    """Raised when an operation requires the opposite frozen/unfrozen state."""


class TokenIdError(LoptError):
    pass


class UnknownTokenError(LoptError):
    pass


class DatasetFormatError(LoptError):
    pass


class CheckpointError(LoptError):
    pass


class ConfigError(LoptError):
    pass


class NonFiniteLossError(LoptError):
    pass


class NonFiniteInputError(LoptError):
    pass
