"""Exception types shared across the package."""

from __future__ import annotations


class L2DiscError(Exception):
    """Base class for all package errors."""


class MalformedFile(L2DiscError):
    """A matrix/cover/constraint file failed to parse."""


class ColumnNormExceeded(L2DiscError):
    """A column's l2 norm exceeds the admissible unit-ball tolerance."""

    def __init__(self, column: int, norm: float):
        super().__init__(f"column {column} has l2 norm {norm:.12g} > 1 + 1e-9")
        self.column = column
        self.norm = norm


class ConstraintBudgetExceeded(L2DiscError):
    """The assembled constraint set is too large for the active set."""

    def __init__(self, counts: dict[str, int], n_active: int, budget: float):
        msg = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
        super().__init__(
            f"{sum(counts.values())} constraints for {n_active} active "
            f"variables exceeds budget {budget:g} ({msg})"
        )
        self.counts = dict(counts)
        self.n_active = n_active
        self.budget = budget


class UvcInfeasible(L2DiscError):
    """No certified vector coloring could be produced for the constraint set."""


class NumericalFailure(L2DiscError):
    """A linear-algebra kernel returned non-finite or degenerate output."""


class StepOverflow(L2DiscError):
    """A walk step could not be kept inside the unit box after retries."""


class MaxStepsExceeded(L2DiscError):
    """The walk hit its step budget with alive variables remaining.

    Carries the partial state and diagnostics so callers can inspect or
    round the incomplete coloring.
    """

    def __init__(self, state, trace=None):
        alive = int((~state.frozen).sum())
        super().__init__(
            f"step budget exhausted at t={state.t} with {alive} alive variables"
        )
        self.state = state
        self.trace = trace
