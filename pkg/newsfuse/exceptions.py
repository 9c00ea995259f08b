""" Error types raised by newsfuse """


class ShapeError(ValueError):
    """Operand shapes are incompatible"""


class ConfigurationError(ValueError):
    """A model, layer, or experiment was configured inconsistently"""


class DegenerateInputError(ValueError):
    """Input is well-formed but carries nothing to compute with"""


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int = 0) -> None:
        if lineno:
            message = "line {}: {}".format(lineno, message)
        super().__init__(message)
        self.lineno = lineno


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required"""


class AccountingError(RuntimeError):
    """A parameter could not be attributed to a model component"""
