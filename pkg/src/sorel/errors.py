"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SorelError(Exception):
    exit_code = 1


class InputError(SorelError, ValueError):
    """Bad shapes, out-of-range ids, empty mention sets."""

    exit_code = 2


class CapacityError(InputError):
    """Sequence longer than the positional table."""


class ConfigError(InputError):
    pass


class ValidationError(InputError):
    """A record parsed but violates a document invariant."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ParseError(ValidationError):
    pass


class NumericError(SorelError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(message if where is None else f"{message} (at {where})")
