"""Exception hierarchy shared by every module."""


class SpaceEraseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SpaceEraseError, ValueError):
    """Shapes, ranges or labels that violate an operation's preconditions."""


class FormatError(SpaceEraseError, ValueError):
    """Malformed CSR data or a corrupt / truncated container file."""


class CapacityError(SpaceEraseError, OverflowError):
    """A count does not fit the fixed 32-bit index width."""


class NumericalError(SpaceEraseError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class IllConditionedError(NumericalError):
    """The closed-form linear system is numerically singular."""
