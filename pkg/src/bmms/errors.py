"""Exception hierarchy shared by every bmms module."""


class BMMSError(Exception):
    """Base class for all bmms errors."""


class InvalidDimensionError(BMMSError, ValueError):
    pass


class IncompleteChainError(BMMSError, ValueError):
    pass


class InvalidPartitionError(BMMSError, ValueError):
    pass


class InvalidConfigError(BMMSError, ValueError):
    pass


class InvalidInputError(BMMSError, ValueError):
    pass


class NumericalSingularityError(BMMSError, ArithmeticError):
    """Raised when a linear system stays singular after diagonal jitter."""
