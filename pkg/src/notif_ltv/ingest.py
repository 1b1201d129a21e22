"""Event-log ingestion.

Reads JSON Lines send logs, groups them into per-user time series, splits
each series into halves, estimates a per-user baseline open rate on the
first half, and flattens the second half into (type, streak, outcome,
baseline) records for the behavior estimator. Users with too few first-half
sends are excluded so that new or unreachable users cannot contaminate the
baselines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .core import (
    DEFAULT_STREAK_BOUNDS,
    NotificationEvent,
    USER_TYPES,
    advance_streak,
)

DEFAULT_MIN_SAMPLES = 10


class LogParseError(ValueError):
    """Raised when a log line is malformed; the message names the line."""


@dataclass
class UserLog:
    """One user's time-ordered send history."""

    user_id: str
    user_type: int
    events: list[NotificationEvent]


@dataclass(frozen=True)
class UserBaseline:
    """Marginal open rate estimated from a user's first-half events."""

    user_id: str
    baseline_rate: float
    sample_count: int


@dataclass(frozen=True)
class FlatRecord:
    """One sent notification with the streak the user was in when it went out.

    raw_score is carried through so downstream summaries can calibrate it.
    """

    user_id: str
    user_type: int
    streak: int
    outcome: int
    baseline_rate: float
    raw_score: float


def _parse_line(line: str, lineno: int) -> NotificationEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise LogParseError(f"line {lineno}: expected a JSON object")
    try:
        user_id = obj["user_id"]
        user_type = obj["user_type"]
        timestamp = obj["timestamp"]
        raw_score = obj["raw_score"]
        outcome = obj["outcome"]
    except KeyError as exc:
        raise LogParseError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
    if not isinstance(user_id, str) or not user_id:
        raise LogParseError(f"line {lineno}: user_id must be a non-empty string")
    if isinstance(user_type, bool) or not isinstance(user_type, int) or user_type not in USER_TYPES:
        raise LogParseError(
            f"line {lineno}: unknown user_type {user_type!r}; expected one of {list(USER_TYPES)}")
    if isinstance(timestamp, bool) or not isinstance(timestamp, int):
        raise LogParseError(f"line {lineno}: timestamp must be an integer")
    if isinstance(raw_score, bool) or not isinstance(raw_score, (int, float)) \
            or not 0.0 <= raw_score <= 1.0:
        raise LogParseError(f"line {lineno}: raw_score must be a number in [0, 1]")
    if isinstance(outcome, bool) or outcome not in (0, 1):
        raise LogParseError(f"line {lineno}: outcome must be 0 or 1, got {outcome!r}")
    return NotificationEvent(user_id=user_id, user_type=user_type, timestamp=timestamp,
                             raw_score=float(raw_score), outcome=outcome)


def read_log(path) -> list[UserLog]:
    """Parse a JSON Lines send log into per-user logs.

    Events are grouped by user and sorted by timestamp (stable, so equal
    timestamps keep file order); users come back sorted by user_id. Blank
    lines are ignored. A user appearing under two different types is an
    error.
    """
    by_user: dict[str, UserLog] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            event = _parse_line(line, lineno)
            log = by_user.get(event.user_id)
            if log is None:
                by_user[event.user_id] = UserLog(user_id=event.user_id,
                                                 user_type=event.user_type,
                                                 events=[event])
            else:
                if log.user_type != event.user_type:
                    raise LogParseError(
                        f"line {lineno}: user {event.user_id!r} changes type "
                        f"from {log.user_type} to {event.user_type}")
                log.events.append(event)
    logs = [by_user[uid] for uid in sorted(by_user)]
    for log in logs:
        log.events.sort(key=lambda e: e.timestamp)
    return logs


def split_halves(log: UserLog) -> tuple[list[NotificationEvent], list[NotificationEvent]]:
    """Split a user's events at floor(n/2); concatenation reproduces the input."""
    cut = len(log.events) // 2
    return log.events[:cut], log.events[cut:]


def estimate_baseline(first: list[NotificationEvent],
                      min_samples: int = DEFAULT_MIN_SAMPLES) -> UserBaseline | None:
    """Mean open rate over the first-half events, or None when excluded.

    Users with fewer than min_samples first-half sends are excluded from
    the analysis entirely.
    """
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    if len(first) < min_samples:
        return None
    opens = sum(e.outcome for e in first)
    return UserBaseline(user_id=first[0].user_id,
                        baseline_rate=opens / len(first),
                        sample_count=len(first))


def flatten(second: list[NotificationEvent], baseline: UserBaseline,
            bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS) -> list[FlatRecord]:
    """Turn a user's second-half events into per-send records.

    Record i carries the streak in force when event i was sent; the streak
    starts at 0 at the top of the second half (first-half history is the
    baseline window and is deliberately not carried over) and then replays
    the observed outcomes.
    """
    if baseline is None:
        raise ValueError("cannot flatten events for an excluded user")
    records = []
    streak = 0
    for event in second:
        records.append(FlatRecord(user_id=event.user_id, user_type=event.user_type,
                                  streak=streak, outcome=event.outcome,
                                  baseline_rate=baseline.baseline_rate,
                                  raw_score=event.raw_score))
        streak = advance_streak(streak, event.outcome, bounds)
    return records


def build_dataset(logs: list[UserLog], min_samples: int = DEFAULT_MIN_SAMPLES,
                  bounds: tuple[int, int] = DEFAULT_STREAK_BOUNDS) -> list[FlatRecord]:
    """Full ingest pipeline: split, estimate baselines, flatten, concatenate.

    Excluded users contribute no records; per-user record order follows the
    sorted user order from read_log, so the dataset is deterministic.
    """
    records: list[FlatRecord] = []
    for log in logs:
        first, second = split_halves(log)
        baseline = estimate_baseline(first, min_samples)
        if baseline is None:
            continue
        records.extend(flatten(second, baseline, bounds))
    return records
