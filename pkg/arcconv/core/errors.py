"""Exception hierarchy shared by the library, the checks and the CLI."""

from typing import Any, Dict, Optional


class ArcError(Exception):
    """Base class for all errors raised by arcconv."""


class DimensionError(ArcError, ValueError):
    """Tensor shapes do not conform to an operation's contract."""


class ConfigurationError(ArcError, ValueError):
    """A configuration value violates a declared invariant."""


class InputError(ArcError, ValueError):
    """Input data is out of the accepted domain (e.g. a label out of range)."""


class ContractError(ArcError, RuntimeError):
    """An API was used outside its contract (e.g. backward on a non-scalar)."""


class FormatError(ArcError):
    """A binary file could not be decoded."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MissingEntryError(ArcError, KeyError):
    """A named entry is absent from a weight archive."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"archive has no entry named '{self.name}'"


class TrainingDivergenceError(ArcError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, last_metrics: Optional[Dict[str, Any]] = None,
                 history: Optional[list] = None):
        super().__init__(message)
        self.last_metrics = last_metrics
        self.history = history or []
