"""Exception hierarchy shared by every service."""
from typing import Optional


class InfoGailError(Exception):
    """Base class for all errors raised by this package."""


class SizeError(InfoGailError, ValueError):
    """Invalid network or collection size."""


class DimensionError(InfoGailError, ValueError):
    """Array dimensions do not match the expected contract."""


class ConfigError(InfoGailError, ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        details = []
        if key:
            details.append(f"key '{key}'")
        if line is not None:
            details.append(f"line {line}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class EnvError(InfoGailError, ValueError):
    """Invalid environment input (mode index, action, step size)."""


class DatasetError(InfoGailError):
    """Demo dataset or trajectory export could not be used."""


class NumericalError(InfoGailError, ArithmeticError):
    """A solver produced non-finite intermediate values."""


class TrainingDivergedError(InfoGailError):
    """A training loss became non-finite."""


class CheckpointError(InfoGailError):
    def __init__(self, message: str, role: Optional[str] = None):
        self.role = role
        super().__init__(message)
