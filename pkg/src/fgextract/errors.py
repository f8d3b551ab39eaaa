"""Exception hierarchy shared across the package."""


class FGExtractError(Exception):
    """Base class for all package errors."""


class DimensionError(FGExtractError, ValueError):
    pass


class DomainError(FGExtractError, ValueError):
    """An input lies outside the domain of the requested function."""


class InvalidInputError(FGExtractError, ValueError):
    pass


class RankError(FGExtractError, ValueError):
    pass


class DegenerateError(FGExtractError, ValueError):
    """Identifiability or cone geometry is degenerate (e.g. r_a * r_b >= 1)."""


class SingularTransformError(FGExtractError, ValueError):
    pass


class InfeasibleTransformError(FGExtractError, ValueError):
    pass


class RescaleRequiredError(FGExtractError, ValueError):
    """The (c, t, u) box needs min(f) < 1 < max(f)."""


class NumericError(FGExtractError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class EmptyDataError(FGExtractError):
    """Nothing left to work on (no qualifying pixels, pairs or windows)."""


class EmptyOracleError(EmptyDataError):
    pass


class FormatError(FGExtractError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(FGExtractError, ValueError):
    def __init__(self, message, path=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
