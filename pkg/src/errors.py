# ------------------------------
# src/errors.py
# Exceptions raised by the toolkit. Each carries the process exit code
# the CLI returns for it.
# ------------------------------

from typing import Dict, List


class ToolkitError(Exception):
    exit_code = 1


class ValidationError(ToolkitError, ValueError):
    """Invalid input: bad type invariants, scenario schema, violated deadline."""

    exit_code = 2


class DomainError(ValidationError):
    """Argument outside a formula's domain (SINR <= 0, p not in (0, 1), ...)."""


class InfeasibleError(ToolkitError):
    """No admissible solution exists for the request."""

    exit_code = 3

    def __init__(self, message: str, reasons: Dict[int, str] | None = None):
        super().__init__(message)
        self.reasons: Dict[int, str] = dict(reasons or {})


class StateSpaceCapacityError(ToolkitError):
    exit_code = 4

    def __init__(self, state_bound: int, cap: int):
        super().__init__(
            f"state space has up to {state_bound} states, above the cap of {cap}; "
            "use the simulator for this system"
        )
        self.state_bound = state_bound
        self.cap = cap


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def require_probability(value: float, name: str) -> float:
    """Return value as float if it lies strictly inside (0, 1)."""
    v = float(value)
    if not 0.0 < v < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")
    return v


__all__: List[str] = [
    "ToolkitError",
    "ValidationError",
    "DomainError",
    "InfeasibleError",
    "StateSpaceCapacityError",
    "require",
    "require_probability",
]
