"""Exception hierarchy.

Validation errors map to CLI exit code 1, numerical failures to exit code 2.
"""


class NBDispError(Exception):
    """Base class for all package errors."""


class ValidationError(NBDispError, ValueError):
    """Input data or parameters violate a documented precondition."""


class InvalidParameterError(ValidationError):
    pass


class DegenerateDataError(ValidationError):
    pass


class UnsupportedAbundanceError(ValidationError):
    pass


class NormalizationInfeasibleError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class NumericalError(NBDispError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy value."""


class DispersionDegenerateError(NumericalError):
    pass


class NumericalIntegrationError(NumericalError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class ChainFailureError(NumericalError):
    pass
