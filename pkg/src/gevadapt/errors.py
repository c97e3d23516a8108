"""Exception hierarchy shared by all modules.

Each class maps to one error kind of the public contracts; the CLI turns
them into exit codes.
"""


class GevAdaptError(Exception):
    """Base class."""


class InvalidConfigError(GevAdaptError, ValueError):
    pass


class InvalidInputError(GevAdaptError, ValueError):
    pass


class ShapeError(InvalidInputError):
    pass


class SignalTooShortError(InvalidInputError):
    pass


class NumericalError(GevAdaptError, ArithmeticError):
    pass


class SingularCovarianceError(NumericalError):
    pass


class DegenerateMaskError(NumericalError):
    pass


class DegenerateError(NumericalError):
    pass


class StateError(GevAdaptError, RuntimeError):
    """A forward record or system component is missing."""


class FreezeViolationError(GevAdaptError, RuntimeError):
    """An update was attempted on a frozen parameter store."""


class NotFoundError(GevAdaptError, KeyError):
    pass


class FormatError(GevAdaptError, ValueError):
    """Malformed checkpoint, matrix dump or WAV file."""
