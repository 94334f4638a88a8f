class HeliocastError(Exception):
    exit_code = 2


class ConfigError(HeliocastError, ValueError):
    exit_code = 1


class DataError(HeliocastError, ValueError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
        self.detail = message


class ValidationError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
        self.detail = message


class UnrecoverableVariableError(DataError):
    pass


class UnsupportedLatitudeError(ConfigError):
    pass


class TrainingError(HeliocastError, RuntimeError):
    exit_code = 3


class ConvergenceError(TrainingError):
    """Raised when an optimizer stops without a usable optimum.

    ``best`` carries the best parameters seen so far, if any.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class LayoutMismatchError(DataError):
    pass
