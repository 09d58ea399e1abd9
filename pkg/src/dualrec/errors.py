class DualError(Exception):
    """Base class for errors raised by dualrec."""


class ShapeError(DualError, ValueError):
    pass


class ParseError(DualError, ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class ConfigError(DualError, ValueError):
    pass


class EmptyDatasetError(DualError):
    pass


class NonFiniteError(DualError, FloatingPointError):
    pass
