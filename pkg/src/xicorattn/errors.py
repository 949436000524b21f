"""Exception types shared across the package."""


class XicorError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(XicorError, ValueError):
    pass


class DomainError(XicorError, ValueError):
    """Input lies outside the domain of a statistic (constant vector, n too small)."""


class ParameterError(XicorError, ValueError):
    pass


class ConfigError(XicorError, ValueError):
    pass


class ContractError(XicorError, RuntimeError):
    """A caller broke an API precondition (non-scalar loss, stale trace, ...)."""


class NumericError(XicorError, ArithmeticError):
    pass


class BijectionError(XicorError, ValueError):
    pass


class ParseError(XicorError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class TrainingDiverged(XicorError, RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step
