"""Exception hierarchy shared by every stage.

Each class carries the process exit code the CLI reports for it:
2 configuration, 3 numeric failure, 4 I/O failure.
"""
from typing import Any


class SLDDError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


# =============================================================================
# CONFIGURATION (exit code 2)
# =============================================================================

class ConfigurationError(SLDDError, ValueError):
    """Invalid configuration, argument or precondition."""

    exit_code = 2


class ShapeMismatchError(ConfigurationError):
    """Operands disagree on a dimension (features, classes, examples)."""


# =============================================================================
# NUMERIC FAILURES (exit code 3)
# =============================================================================

class NumericalError(SLDDError, ArithmeticError):
    """A computation produced an unusable numeric result."""

    exit_code = 3


class NonFiniteError(NumericalError):
    """Input or output contains NaN/inf.

    Attributes:
        index (tuple | None): Position of the first offending entry.
    """

    def __init__(self, message: str, index: Any = None) -> None:
        super().__init__(message if index is None else f"{message} (first at index {index})")
        self.index = index


class DivergenceError(NumericalError):
    """The solver objective became non-finite."""

    def __init__(self, last_objective: float, iteration: int, lambda_: float | None = None) -> None:
        where = "" if lambda_ is None else f" at lambda={lambda_:.6g}"
        super().__init__(
            f"solver diverged{where} after {iteration} updates "
            f"(last finite objective {last_objective:.6g})"
        )
        self.last_objective = last_objective
        self.iteration = iteration
        self.lambda_ = lambda_

    def at_lambda(self, lambda_: float) -> "DivergenceError":
        """Returns a copy tagged with the regularization strength that failed."""
        return DivergenceError(self.last_objective, self.iteration, lambda_)


class TieError(NumericalError):
    """A max/argmax required to be unique is attained more than once."""

    def __init__(self, what: str, indices: list) -> None:
        super().__init__(f"tie in {what}: {indices[:10]}{' ...' if len(indices) > 10 else ''}")
        self.indices = indices


class BudgetError(NumericalError):
    """No regularization path entry satisfies the sparsity budget."""

    def __init__(self, budget: float, smallest_n_per_class: float) -> None:
        super().__init__(
            f"no path entry with n_per_class <= {budget:g}; "
            f"smallest available is {smallest_n_per_class:g}"
        )
        self.budget = budget
        self.smallest_n_per_class = smallest_n_per_class


class SelectionExhaustedError(NumericalError):
    """The path ended without any new feature entering."""

    def __init__(self, n_selected: int, n_target: int) -> None:
        super().__init__(
            f"feature selection exhausted after {n_selected} of {n_target} features: "
            "no remaining feature entered the path"
        )
        self.n_selected = n_selected
        self.n_target = n_target


# =============================================================================
# I/O FAILURES (exit code 4)
# =============================================================================

class ArtifactError(SLDDError, OSError):
    """An artifact is missing, unreadable or cannot be written."""

    exit_code = 4


class CodecError(ArtifactError):
    """A binary or JSON artifact is malformed."""
