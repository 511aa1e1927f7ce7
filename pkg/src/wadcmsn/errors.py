"""Exception types shared across the package."""


class WadCmsnError(Exception):
    """Base class for all package errors."""


class ShapeError(WadCmsnError, ValueError):
    pass


class NumericError(WadCmsnError, ArithmeticError):
    pass


class ValidationError(WadCmsnError, ValueError):
    pass


class ParseError(WadCmsnError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StaleTapeError(WadCmsnError, RuntimeError):
    """backward() was handed a tape that no longer matches the network."""


class CheckpointError(WadCmsnError, ValueError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class ConfigError(ValidationError):
    """Bad run configuration: unknown keys, missing paths, conflicting options."""
