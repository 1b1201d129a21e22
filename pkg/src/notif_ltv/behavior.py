"""Streak-response model estimation.

The model says that a user in streak s opens a sent notification with
probability min(f(c, s) * p_base, 1), where p_base is the user's own
baseline open rate and f is a multiplicative factor shared by every user of
type c. Factors are estimated as a ratio of observed opens to the opens the
baselines alone would predict, projected onto a monotone shape (rising with
positive streaks, falling with negative ones), and finally shrunk toward 1
by the causal fraction kappa, since the raw estimate is correlational.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .calibrate import CalibrationMap, apply_calibration, pav
from .core import DEFAULT_STREAK_BOUNDS, USER_TYPES, validate_streak_bounds
from .ingest import FlatRecord

# keeps estimated factors strictly positive even for all-ignore cells
_FACTOR_FLOOR = 1e-12

_MEAN_OPEN_EPS = 1e-6


class MissingTypeError(ValueError):
    """Raised when the dataset has no records for one or more user types."""


@dataclass
class FactorTable:
    """Per-(type, streak) multiplicative factors with their sample counts.

    factors and counts are arrays of shape (len(types), n_streaks) where
    column j holds streak bounds[0] + j. The streak-0 column is pinned to 1:
    it is the no-history state and carries no deviation by convention.
    """

    bounds: tuple[int, int]
    types: tuple[int, ...]
    factors: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.bounds = validate_streak_bounds(self.bounds)
        self.types = tuple(int(c) for c in self.types)
        n_streaks = self.bounds[1] - self.bounds[0] + 1
        self.factors = np.asarray(self.factors, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        shape = (len(self.types), n_streaks)
        if self.factors.shape != shape or self.counts.shape != shape:
            raise ValueError(f"factor/count arrays must have shape {shape}")
        if np.any(self.factors <= 0.0):
            raise ValueError("factors must be strictly positive")
        self._row_of = {c: i for i, c in enumerate(self.types)}

    @classmethod
    def neutral(cls, bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS,
                types: tuple[int, ...] = USER_TYPES) -> "FactorTable":
        n = bounds[1] - bounds[0] + 1
        return cls(bounds=bounds, types=types,
                   factors=np.ones((len(types), n)),
                   counts=np.zeros((len(types), n), dtype=np.int64))

    def streaks(self) -> range:
        return range(self.bounds[0], self.bounds[1] + 1)

    def _col(self, streak: int) -> int:
        lo, hi = self.bounds
        if not lo <= streak <= hi:
            raise KeyError(f"streak {streak} outside bounds {self.bounds}")
        return streak - lo

    def factor(self, user_type: int, streak: int) -> float:
        return float(self.factors[self._row_of[user_type], self._col(streak)])

    def count(self, user_type: int, streak: int) -> int:
        return int(self.counts[self._row_of[user_type], self._col(streak)])

    def replace_factors(self, new_factors: np.ndarray) -> "FactorTable":
        return FactorTable(bounds=self.bounds, types=self.types,
                           factors=np.asarray(new_factors, dtype=float),
                           counts=self.counts.copy())

    def to_dict(self) -> dict:
        return {
            "streak_bounds": list(self.bounds),
            "types": list(self.types),
            "factors": {str(c): [float(v) for v in self.factors[i]]
                        for i, c in enumerate(self.types)},
            "counts": {str(c): [int(v) for v in self.counts[i]]
                       for i, c in enumerate(self.types)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorTable":
        types = tuple(int(c) for c in d["types"])
        return cls(bounds=tuple(d["streak_bounds"]), types=types,
                   factors=np.array([d["factors"][str(c)] for c in types], dtype=float),
                   counts=np.array([d["counts"][str(c)] for c in types], dtype=np.int64))


def estimate_factors(records: list[FlatRecord],
                     bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS,
                     types: tuple[int, ...] = USER_TYPES) -> FactorTable:
    """Ratio estimator for the streak factors.

    For each (type, streak) cell, the factor is the sum of observed opens
    divided by the sum of the senders' baseline rates over the records in
    that cell: how much better or worse users did than their own baselines
    predict. Cells with no records stay at the neutral factor 1, and the
    streak-0 column is pinned to 1 regardless of data.
    """
    if not records:
        raise ValueError("cannot estimate factors from an empty record set")
    bounds = validate_streak_bounds(bounds)
    n_streaks = bounds[1] - bounds[0] + 1
    row_of = {c: i for i, c in enumerate(types)}
    opens = np.zeros((len(types), n_streaks))
    expected = np.zeros((len(types), n_streaks))
    counts = np.zeros((len(types), n_streaks), dtype=np.int64)
    for rec in records:
        row = row_of[rec.user_type]
        col = rec.streak - bounds[0]
        opens[row, col] += rec.outcome
        expected[row, col] += rec.baseline_rate
        counts[row, col] += 1
    factors = np.ones((len(types), n_streaks))
    populated = expected > 0.0
    factors[populated] = np.maximum(opens[populated] / expected[populated], _FACTOR_FLOOR)
    factors[:, -bounds[0]] = 1.0  # streak-0 column
    return FactorTable(bounds=bounds, types=types, factors=factors, counts=counts)


def monotone_project(raw: FactorTable) -> FactorTable:
    """Project each type's factors onto the monotone shape constraint.

    The positive branch (s = 1 .. s_max) becomes its sample-count-weighted
    non-decreasing isotonic fit and the negative branch (s = -1 down to
    s_min) its non-increasing fit, so a longer open run never predicts a
    lower factor and a longer ignore run never a higher one. Streak 0 stays
    pinned at 1.
    """
    lo, hi = raw.bounds
    zero = -lo
    factors = raw.factors.copy()
    for i in range(len(raw.types)):
        pos_vals = factors[i, zero + 1:]
        pos_wts = raw.counts[i, zero + 1:]
        factors[i, zero + 1:] = pav(pos_vals, pos_wts, increasing=True)
        # negative branch ordered s = -1, -2, ..., s_min
        neg_vals = factors[i, zero - 1::-1]
        neg_wts = raw.counts[i, zero - 1::-1]
        factors[i, zero - 1::-1] = pav(neg_vals, neg_wts, increasing=False)
    factors = np.maximum(factors, _FACTOR_FLOOR)
    factors[:, zero] = 1.0
    return raw.replace_factors(factors)


def apply_kappa(table: FactorTable, kappa: float) -> FactorTable:
    """Shrink every factor toward 1 by the causal fraction kappa.

    Only a fraction of the streak/open-rate correlation is believed to be
    causal; f -> (f - 1) * kappa + 1 keeps that fraction of the deviation.
    kappa=0 neutralizes the table entirely, kappa=1 keeps it unchanged.
    """
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must be in [0, 1], got {kappa}")
    scaled = (table.factors - 1.0) * kappa + 1.0
    return table.replace_factors(np.maximum(scaled, _FACTOR_FLOOR))


def summarize_types(records: list[FlatRecord],
                    calibration: CalibrationMap | None = None,
                    types: tuple[int, ...] = USER_TYPES,
                    ) -> tuple[dict[int, float], dict[int, float]]:
    """Per-type mean calibrated score of sent notifications and population shares.

    The mean score stands in for the open probability of a typical future
    notification for that type, which is all the solver needs about the
    score distribution. With calibration=None the raw scores are taken as
    already calibrated. Every requested type must have records.
    """
    if not records:
        raise ValueError("cannot summarize an empty record set")
    score_sum = {c: 0.0 for c in types}
    score_n = {c: 0 for c in types}
    users: dict[int, set] = {c: set() for c in types}
    for rec in records:
        c = rec.user_type
        if c not in score_sum:
            continue
        score = rec.raw_score if calibration is None \
            else apply_calibration(calibration, rec.raw_score)
        score_sum[c] += score
        score_n[c] += 1
        users[c].add(rec.user_id)
    missing = [c for c in types if score_n[c] == 0]
    if missing:
        raise MissingTypeError(f"no records for user type(s) {missing}")
    mean_open = {c: min(max(score_sum[c] / score_n[c], _MEAN_OPEN_EPS), 1.0 - _MEAN_OPEN_EPS)
                 for c in types}
    total_users = sum(len(users[c]) for c in types)
    shares = {c: len(users[c]) / total_users for c in types}
    return mean_open, shares


@dataclass
class BehaviorModel:
    """Everything the solver needs about user behavior.

    factors is the kappa-corrected table; type_mean_open is the mean
    calibrated score of sent notifications per type; shares record how the
    estimation population was distributed over types.
    """

    factors: FactorTable
    kappa: float
    type_mean_open: dict[int, float]
    type_population_share: dict[int, float] = field(default_factory=dict)

    @property
    def types(self) -> tuple[int, ...]:
        return self.factors.types

    def to_dict(self) -> dict:
        d = {"version": 1, "kappa": self.kappa}
        d.update(self.factors.to_dict())
        d["type_mean_open"] = {str(c): float(v) for c, v in sorted(self.type_mean_open.items())}
        d["type_population_share"] = {str(c): float(v)
                                      for c, v in sorted(self.type_population_share.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorModel":
        return cls(
            factors=FactorTable.from_dict(d),
            kappa=float(d["kappa"]),
            type_mean_open={int(c): float(v) for c, v in d["type_mean_open"].items()},
            type_population_share={int(c): float(v)
                                   for c, v in d.get("type_population_share", {}).items()},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BehaviorModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_behavior_model(records: list[FlatRecord], kappa: float,
                       calibration: CalibrationMap | None = None,
                       bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS,
                       types: tuple[int, ...] = USER_TYPES) -> BehaviorModel:
    """Estimate, project, kappa-correct, and summarize in one pass.

    Projection runs before the kappa scaling: scaling is affine around 1,
    so it preserves monotonicity, and projecting first denoises the raw
    estimate once.
    """
    raw = estimate_factors(records, bounds, types)
    projected = monotone_project(raw)
    corrected = apply_kappa(projected, kappa)
    mean_open, shares = summarize_types(records, calibration, types)
    return BehaviorModel(factors=corrected, kappa=kappa,
                         type_mean_open=mean_open, type_population_share=shares)
