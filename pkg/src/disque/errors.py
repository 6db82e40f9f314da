"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class DisqueError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(DisqueError, ValueError):
    exit_code = 2


class DataError(DisqueError, ValueError):
    exit_code = 3


class ColorspaceError(DataError):
    """An image was passed to an operation expecting another colorspace."""


class SizeError(DataError):
    """An image is too small (or badly shaped) for the requested operation."""


class SpecParseError(ConfigError):
    """A transform spec string could not be parsed."""

    def __init__(self, message: str, text: str = "", position: int = -1):
        self.text = text
        self.position = position
        if position >= 0:
            message = f"{message} (at position {position} in {text!r})"
        super().__init__(message)


class CheckpointError(DataError):
    pass


class NumericalError(DisqueError, ArithmeticError):
    exit_code = 4


class ShapeError(DisqueError, ValueError):
    """Tensors or vectors with incompatible shapes were combined."""
