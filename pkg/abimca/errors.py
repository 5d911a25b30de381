from typing import Optional, Union

__all__ = (
    "AbimcaError",
    "InvalidArgumentError",
    "ConfigurationError",
    "ParseError",
    "GenerationError",
    "TrainingError",
)


class AbimcaError(Exception):
    pass


class InvalidArgumentError(AbimcaError, ValueError):
    pass


class ConfigurationError(AbimcaError, ValueError):
    pass


class ParseError(AbimcaError, ValueError):
    """
    Malformed input file. ``row`` is the 1-based data row, ``column`` the column name or index.
    """

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[Union[int, str]] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class GenerationError(AbimcaError, RuntimeError):
    pass


class TrainingError(AbimcaError, RuntimeError):
    def __init__(self, message: str, t: Optional[int] = None):
        if t is not None:
            message = f"{message} at t={t}"
        super().__init__(message)
        self.t = t
