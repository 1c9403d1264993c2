"""Exception hierarchy shared by every module in the package."""


class ReCalError(ValueError):
    """Base class for all errors raised by this package."""


class ParseError(ReCalError):
    """A logits CSV (or other text input) is malformed.

    ``line`` is the 1-indexed line number when one applies.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(ReCalError):
    """A calibration-map or tensor file has the wrong version or layout."""


class DomainError(ReCalError):
    """A numeric argument lies outside the domain of the operation."""


class ContractError(ReCalError):
    """Inputs violate a precondition (missing labels, misaligned tables, ...)."""
