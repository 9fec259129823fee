"""Exception types raised across the package."""


class StagePolyError(Exception):
    """Base class for all errors raised by stagepoly."""


class InvalidMonomial(StagePolyError, ValueError):
    pass


class InvalidExpansion(StagePolyError, ValueError):
    pass


class InvalidParam(StagePolyError, ValueError):
    pass


class NumericOverflow(StagePolyError, ArithmeticError):
    """A prediction, gradient or weight became non-finite."""

    def __init__(self, message, example_index=None):
        super().__init__(message)
        self.example_index = example_index


class EmptyData(StagePolyError, ValueError):
    pass


class ParseError(StagePolyError, ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ManifestError(StagePolyError, ValueError):
    pass


class SolverFailure(StagePolyError, RuntimeError):
    pass


class DegenerateBaselines(StagePolyError, ValueError):
    """Linear, quadratic and cubic baselines all have the same error."""


class InvalidTiming(StagePolyError, ValueError):
    pass


class UndefinedAUC(StagePolyError, ValueError):
    pass


class ModelFormatError(StagePolyError, ValueError):
    pass
