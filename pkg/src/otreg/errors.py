"""Exception hierarchy shared by all modules."""


class OTRegError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(OTRegError, ValueError):
    pass


class DomainError(OTRegError, ValueError):
    pass


class DegenerateInputError(OTRegError, ValueError):
    pass


class DegeneratePlanError(DegenerateInputError):
    pass


class ContractError(OTRegError, ValueError):
    pass


class EmptyOutputError(OTRegError, ValueError):
    pass


class SizeLimitError(OTRegError, ValueError):
    pass


class EvaluationError(OTRegError, ArithmeticError):
    pass


class NumericalOverflowError(OTRegError, ArithmeticError):
    pass


class DivergenceError(OTRegError, ArithmeticError):
    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class FormatError(OTRegError, ValueError):
    """Malformed matrix / config file.  ``offset`` is a byte offset, ``line`` 1-based."""

    def __init__(self, message, offset=None, line=None):
        super().__init__(message)
        self.offset = offset
        self.line = line


class ConfigError(FormatError):
    pass
