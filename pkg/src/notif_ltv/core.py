"""Domain types and the streak state machine shared by the whole pipeline.

The streak is a signed count of consecutive identical outcomes on sent
notifications: s=+3 means the user opened the last three, s=-2 means they
ignored the last two. An ignore after a positive run flips the streak to -1
(it never just decrements), and an open after a negative run flips it to +1.
Decisions not to send leave the streak untouched. Streaks are clamped to
fixed bounds so model tables and the solver state space stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

USER_TYPES: tuple[int, ...] = (1, 2, 3, 4, 5, 6)

DEFAULT_STREAK_BOUNDS: tuple[int, int] = (-15, 15)


def validate_user_type(value: int) -> int:
    """Check that `value` is one of the known user types and return it."""
    if isinstance(value, bool) or not isinstance(value, int) or value not in USER_TYPES:
        raise ValueError(f"unknown user_type {value!r}; expected one of {list(USER_TYPES)}")
    return value


def validate_streak_bounds(bounds: tuple[int, int]) -> tuple[int, int]:
    """Streak bounds must bracket both reachable signs: lo <= -1 and hi >= 1."""
    lo, hi = int(bounds[0]), int(bounds[1])
    if lo > -1 or hi < 1:
        raise ValueError(f"streak_bounds {bounds} must satisfy lo <= -1 <= 1 <= hi")
    return (lo, hi)


@dataclass(frozen=True)
class NotificationEvent:
    """One logged send: who received it, when, the ranker's raw score in
    [0, 1], and whether it was opened (outcome 1) or ignored (outcome 0)."""

    user_id: str
    user_type: int
    timestamp: int
    raw_score: float
    outcome: int


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the long-term-value solver.

    gamma discounts future opens per decision opportunity; horizon is the
    number of remaining opportunities the backward recursion unrolls;
    kappa records the causal fraction the behavior model was scaled with;
    threshold_tolerance is the binary-search resolution for policy
    thresholds.
    """

    gamma: float = 0.9
    horizon: int = 250
    kappa: float = 1.0
    streak_bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS
    threshold_tolerance: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must be in [0, 1], got {self.kappa}")
        if self.threshold_tolerance <= 0.0:
            raise ValueError("threshold_tolerance must be > 0")
        object.__setattr__(self, "streak_bounds", validate_streak_bounds(self.streak_bounds))

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "horizon": self.horizon,
            "kappa": self.kappa,
            "streak_bounds": list(self.streak_bounds),
            "threshold_tolerance": self.threshold_tolerance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(
            gamma=float(d["gamma"]),
            horizon=int(d["horizon"]),
            kappa=float(d.get("kappa", 1.0)),
            streak_bounds=tuple(d.get("streak_bounds", DEFAULT_STREAK_BOUNDS)),
            threshold_tolerance=float(d.get("threshold_tolerance", 1e-6)),
        )


@dataclass
class SendLimitConfig:
    """Per-type daily send caps plus a global signed adjustment.

    The effective cap never goes below zero: max(limit + adjustment, 0).
    """

    limits: dict[int, int]
    adjustment: int = 0

    def __post_init__(self):
        for c, lam in self.limits.items():
            validate_user_type(c)
            if lam < 0:
                raise ValueError(f"send limit for type {c} must be >= 0, got {lam}")

    def effective_limit(self, user_type: int) -> int:
        return max(self.limits[user_type] + self.adjustment, 0)

    def with_extra_adjustment(self, extra: int) -> "SendLimitConfig":
        return SendLimitConfig(limits=dict(self.limits), adjustment=self.adjustment + extra)

    def to_dict(self) -> dict:
        return {"limits": {str(c): int(v) for c, v in sorted(self.limits.items())},
                "adjustment": int(self.adjustment)}

    @classmethod
    def from_dict(cls, d: dict) -> "SendLimitConfig":
        return cls(limits={int(c): int(v) for c, v in d["limits"].items()},
                   adjustment=int(d.get("adjustment", 0)))


def clamp_streak(s: int, bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS) -> int:
    lo, hi = bounds
    return lo if s < lo else hi if s > hi else s


def advance_streak(s: int, outcome: int, bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS) -> int:
    """Next streak after a *sent* notification resolves.

    An open extends a non-negative run (max(s, 0) + 1); an ignore extends a
    non-positive run (min(s, 0) - 1). Either way a run of the opposite sign
    restarts at +-1 rather than decrementing. The result is clamped.
    """
    nxt = max(s, 0) + 1 if outcome else min(s, 0) - 1
    return clamp_streak(nxt, bounds)


def streak_after_skip(s: int) -> int:
    """Skipping a send leaves the streak exactly as it was."""
    return s
