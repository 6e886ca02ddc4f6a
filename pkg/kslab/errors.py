from typing import Any, Dict, Optional


class LabError(Exception):
    """Base error for the lab; carries the CLI exit status."""
    exit_code: int = 1


class ConfigError(LabError):
    exit_code = 2


class DomainError(LabError, ValueError):
    """An operation was called outside its preconditions."""
    exit_code = 2


class NumericalFailure(LabError):
    exit_code = 3

    def __init__(self, message: str, state_dump: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.state_dump = state_dump or {}


class SuiteFailure(LabError):
    exit_code = 4
