"""Finite-horizon send/skip solver.

Works backward from the horizon over the (user type, streak, steps
remaining) state space. Sending a notification with open probability p
either extends the open streak (probability min(f*p, 1), immediate reward
1) or breaks it; skipping keeps the streak and only discounts the future.
Future notifications enter only through their open probability, and the
recursion is linear in that probability, so every expectation over future
scores collapses to the per-type mean score -- which is what makes the
value function memoizable on (type, streak, steps).

The policy itself is a table of score thresholds: for each (type, streak)
cell, binary search finds the smallest calibrated score at which sending is
worth at least as much as skipping.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .behavior import BehaviorModel
from .core import SolverConfig, advance_streak, clamp_streak

logger = logging.getLogger(__name__)

# threshold meaning "no score justifies sending"; any score compares below it
NEVER_SEND = math.inf

ValueMemo = dict


def q_send(model: BehaviorModel, config: SolverConfig, user_type: int, streak: int,
           p, steps: int, memo: ValueMemo):
    """Value of sending a notification with open probability p.

    p may be a scalar or a numpy array (the recursion is evaluated
    pointwise either way). The open branch advances the streak and earns 1
    now; the ignore branch breaks it; both continue at the discounted state
    value of the next decision.
    """
    f = model.factors.factor(user_type, streak)
    fp = f * p
    if isinstance(fp, np.ndarray):
        p_open = np.minimum(fp, 1.0)
    else:
        p_open = fp if fp < 1.0 else 1.0
    bounds = config.streak_bounds
    up = advance_streak(streak, 1, bounds)
    down = advance_streak(streak, 0, bounds)
    gamma = config.gamma
    v_up = state_value(model, config, user_type, up, steps - 1, memo)
    v_down = state_value(model, config, user_type, down, steps - 1, memo)
    return p_open * (1.0 + gamma * v_up) + (1.0 - p_open) * (gamma * v_down)


def q_skip(model: BehaviorModel, config: SolverConfig, user_type: int, streak: int,
           steps: int, memo: ValueMemo) -> float:
    """Value of not sending: the streak stays put, the future is discounted."""
    return config.gamma * state_value(model, config, user_type, streak, steps - 1, memo)


def state_value(model: BehaviorModel, config: SolverConfig, user_type: int, streak: int,
                steps: int, memo: ValueMemo) -> float:
    """Optimal value with `steps` decision opportunities left.

    Future notifications are represented by the type-mean open probability,
    so V depends only on (type, streak, steps). Values are filled bottom-up
    into the memo for all streaks of the requested type, which keeps every
    later lookup O(1) and avoids deep recursion at production horizons.
    """
    if steps <= 0:
        return 0.0
    lo, hi = config.streak_bounds
    streak = clamp_streak(streak, (lo, hi))
    key = (user_type, streak, steps)
    cached = memo.get(key)
    if cached is not None:
        return cached
    ybar = model.type_mean_open[user_type]
    for k in range(1, steps + 1):
        for s in range(lo, hi + 1):
            cell = (user_type, s, k)
            if cell in memo:
                continue
            send = q_send(model, config, user_type, s, ybar, k, memo)
            skip = q_skip(model, config, user_type, s, k, memo)
            memo[cell] = send if send >= skip else skip
    return memo[key]


def _advantage(model, config, user_type, streak, p, memo) -> float:
    steps = config.horizon
    return (q_send(model, config, user_type, streak, p, steps, memo)
            - q_skip(model, config, user_type, streak, steps, memo))


def find_threshold(model: BehaviorModel, config: SolverConfig, user_type: int,
                   streak: int, memo: ValueMemo | None = None) -> float:
    """Smallest calibrated score at which sending beats (or ties) skipping.

    The advantage of sending is linear in the score below the probability
    clip and flat above it, hence non-decreasing whenever the open-branch
    continuation is not catastrophically worse than the ignore branch; the
    slope is checked and a grid scan at the tolerance resolution takes over
    if it ever comes out negative. Returns 0 when sending always wins and
    NEVER_SEND when even a perfect score loses.
    """
    if memo is None:
        memo = {}
    if _advantage(model, config, user_type, streak, 0.0, memo) >= 0.0:
        return 0.0
    if _advantage(model, config, user_type, streak, 1.0, memo) < 0.0:
        return NEVER_SEND

    bounds = config.streak_bounds
    gamma = config.gamma
    steps = config.horizon
    v_up = state_value(model, config, user_type,
                       advance_streak(streak, 1, bounds), steps - 1, memo)
    v_down = state_value(model, config, user_type,
                         advance_streak(streak, 0, bounds), steps - 1, memo)
    if 1.0 + gamma * (v_up - v_down) < 0.0:
        logger.warning(
            "advantage slope negative for type %d streak %d; "
            "falling back to grid scan", user_type, streak)
        return _grid_scan(model, config, user_type, streak, memo)

    lo, hi = 0.0, 1.0
    tol = config.threshold_tolerance
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _advantage(model, config, user_type, streak, mid, memo) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def _grid_scan(model, config, user_type, streak, memo) -> float:
    n = int(math.ceil(1.0 / config.threshold_tolerance))
    for i in range(n + 1):
        p = i / n
        if _advantage(model, config, user_type, streak, p, memo) >= 0.0:
            return p
    return NEVER_SEND


@dataclass
class PolicyTable:
    """Solved send thresholds per (user type, streak), plus the config used.

    thresholds has shape (len(types), n_streaks); math.inf marks cells
    where sending is never worthwhile.
    """

    config: SolverConfig
    types: tuple[int, ...]
    thresholds: np.ndarray

    def __post_init__(self):
        self.types = tuple(int(c) for c in self.types)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        lo, hi = self.config.streak_bounds
        shape = (len(self.types), hi - lo + 1)
        if self.thresholds.shape != shape:
            raise ValueError(f"thresholds must have shape {shape}")
        self._row_of = {c: i for i, c in enumerate(self.types)}

    def threshold(self, user_type: int, streak: int) -> float:
        """Lookup with the streak clamped into the table bounds first."""
        lo, hi = self.config.streak_bounds
        s = clamp_streak(streak, (lo, hi))
        return float(self.thresholds[self._row_of[user_type], s - lo])

    def to_dict(self) -> dict:
        lo, hi = self.config.streak_bounds
        return {
            "version": 1,
            "config": self.config.to_dict(),
            "types": list(self.types),
            "streak_bounds": [lo, hi],
            "thresholds": {
                str(c): [None if math.isinf(v) else float(v) for v in self.thresholds[i]]
                for i, c in enumerate(self.types)
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyTable":
        config = SolverConfig.from_dict(d["config"])
        types = tuple(int(c) for c in d["types"])
        rows = [[NEVER_SEND if v is None else float(v) for v in d["thresholds"][str(c)]]
                for c in types]
        return cls(config=config, types=types, thresholds=np.array(rows, dtype=float))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["user_type", "streak", "threshold"])
        lo, hi = self.config.streak_bounds
        for i, c in enumerate(self.types):
            for s in range(lo, hi + 1):
                v = self.thresholds[i, s - lo]
                writer.writerow([c, s, "never_send" if math.isinf(v) else repr(float(v))])
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PolicyTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def solve_policy(model: BehaviorModel, config: SolverConfig) -> PolicyTable:
    """Solve one threshold per (type, streak) cell.

    Deterministic: cells are visited in sorted order with one shared memo
    per type, so identical inputs produce bit-identical tables.
    """
    lo, hi = config.streak_bounds
    mlo, mhi = model.factors.bounds
    if lo < mlo or hi > mhi:
        raise ValueError(
            f"solver bounds {config.streak_bounds} exceed model bounds {model.factors.bounds}")
    for c in model.types:
        if c not in model.type_mean_open:
            raise ValueError(f"model has no mean open rate for type {c}")

    thresholds = np.empty((len(model.types), hi - lo + 1))
    for i, c in enumerate(model.types):
        memo: ValueMemo = {}
        for s in range(lo, hi + 1):
            thresholds[i, s - lo] = find_threshold(model, config, c, s, memo)
    return PolicyTable(config=config, types=model.types, thresholds=thresholds)
