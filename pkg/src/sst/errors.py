"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError and ContractError/DimensionError
are usage problems (1), DataError and ParseError are input problems (2),
NumericalError is a runtime numerical failure (3).
"""


class SstError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SstError):
    """Tensor shapes violate an operation's contract."""


class ContractError(SstError):
    """An API precondition was violated (non-scalar backward, NaN loss, ...)."""


class DataError(SstError):
    """Input data cannot satisfy the request (missing class, bad label, ...)."""


class ParseError(SstError):
    """Malformed EDF/TAL input; carries a byte offset or record index."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(SstError):
    """Invalid or inconsistent configuration."""


class NumericalError(SstError):
    """Non-finite loss or other numerical breakdown during training."""
