"""Exception hierarchy shared across the package."""


class SeqDenoiseError(Exception):
    """Base class for all package errors."""


class DataError(SeqDenoiseError):
    """Malformed or empty interaction data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(DataError):
    pass


class AugmentationError(SeqDenoiseError):
    pass


class ContractError(ValueError, SeqDenoiseError):
    """A tensor-level precondition (shape, index range, temperature) was violated."""


class ConfigError(SeqDenoiseError):
    pass


class DivergenceError(SeqDenoiseError):
    """Training produced a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
