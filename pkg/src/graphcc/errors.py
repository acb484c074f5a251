"""Exception hierarchy. CLI exit codes are attached to each class."""


class GCCError(Exception):
    exit_code = 1


class ConfigError(GCCError, ValueError):
    """Invalid configuration or input; carries the offending key path when known."""

    exit_code = 3

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class FormatError(GCCError, ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    exit_code = 3

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ShapeError(GCCError, ValueError):
    exit_code = 3


class NumericError(GCCError, ArithmeticError):
    exit_code = 4
