"""Runtime send/skip policies.

Every policy applies the daily send-limit gate itself, mirroring the outer
check of the production decision loop, so no caller can accidentally bypass
it. The caller owns the per-user counters (sends today, streak) and passes
them in as a DecisionContext.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import validate_user_type
from .solver import PolicyTable


@dataclass(frozen=True)
class HeuristicThresholds:
    """Per-type fixed score cutoffs for the heuristic filter."""

    by_type: dict[int, float]

    def __post_init__(self):
        for c, k in self.by_type.items():
            validate_user_type(c)
            if not 0.0 <= k <= 1.0:
                raise ValueError(f"threshold for type {c} must be in [0, 1], got {k}")

    def k(self, user_type: int) -> float:
        return self.by_type[user_type]

    def to_dict(self) -> dict:
        return {str(c): float(k) for c, k in sorted(self.by_type.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "HeuristicThresholds":
        return cls(by_type={int(c): float(k) for c, k in d.items()})


@dataclass(frozen=True)
class DecisionContext:
    """Everything a policy may look at for one candidate notification."""

    user_type: int
    streak: int
    calibrated_score: float
    sends_today: int
    effective_limit: int


def _under_limit(ctx: DecisionContext) -> bool:
    return ctx.sends_today < ctx.effective_limit


def decide_no_filter(ctx: DecisionContext) -> bool:
    """Send everything the daily limit allows."""
    return _under_limit(ctx)


def decide_heuristic(ctx: DecisionContext, thresholds: HeuristicThresholds) -> bool:
    """Send when the calibrated score strictly exceeds the type's cutoff."""
    return _under_limit(ctx) and ctx.calibrated_score > thresholds.k(ctx.user_type)


def decide_rl(ctx: DecisionContext, table: PolicyTable) -> bool:
    """Send when the score reaches the solved (type, streak) threshold.

    Ties send, matching the solver's tie-breaking. A NEVER_SEND cell is
    math.inf, which no score in [0, 1] can reach.
    """
    return _under_limit(ctx) and ctx.calibrated_score >= table.threshold(ctx.user_type, ctx.streak)
