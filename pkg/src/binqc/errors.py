"""Exception types raised across the package."""


class BinqcError(Exception):
    """Base class for all package errors."""


class DimensionError(BinqcError, ValueError):
    """Operand shapes are incompatible.

    ``index`` names the offending controller (0-based) when one is to blame.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotHermitianError(BinqcError, ValueError):
    pass


class NotUnitaryError(BinqcError, ValueError):
    pass


class ObjectiveError(BinqcError, ArithmeticError):
    """An objective or its gradient is undefined at the given point."""


class InfeasibleConstraintError(BinqcError, ValueError):
    pass


class FormatError(BinqcError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(BinqcError, ValueError):
    pass


class ArtifactExistsError(BinqcError, FileExistsError):
    """Refusing to overwrite an existing run artifact without ``--force``."""
