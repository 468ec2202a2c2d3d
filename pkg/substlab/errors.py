"""
Exception hierarchy. Each error carries the CLI exit code it maps to and,
when known, the model field or budget it concerns.
"""
from typing import Optional


class SubstLabError(Exception):
    exit_code: int = 1

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ModelError(SubstLabError, ValueError):
    """Malformed or invalid model, or an argument outside an operation's domain."""
    exit_code = 2


class UnsupportedStructureError(ModelError):
    """The operation needs structure (constant length, bundle, ...) the model lacks."""


class ConfigError(ModelError):
    """Inconsistent run or simulation configuration."""


class BudgetExceededError(SubstLabError):
    exit_code = 3

    def __init__(self, budget_name: str, required: int, budget: int):
        super().__init__(
            f"{budget_name} exceeded: requires {required}, budget is {budget}",
            field=budget_name,
        )
        self.budget_name = budget_name
        self.required = required
        self.budget = budget


class ConvergenceError(SubstLabError, RuntimeError):
    exit_code = 4

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def from_validation_error(exc, root: str = "") -> ModelError:
    """Converts a pydantic ValidationError into a ModelError naming the first offending field."""
    first = exc.errors()[0]
    loc = ".".join(str(part) for part in first.get("loc", ()))
    field = ".".join(part for part in (root, loc) if part) or None
    message = first.get("msg", str(exc)).removeprefix("Value error, ")
    return ModelError(f"{field}: {message}" if field else message, field=field)
