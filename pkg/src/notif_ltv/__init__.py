"""Long-term-value send/skip policies for push notifications.

Learns how streaks of opened or ignored notifications shift a user's open
rate, solves a finite-horizon recursion for the score threshold above which
sending maximizes discounted future opens, and validates the resulting
policy against no-filter and fixed-threshold baselines in a deterministic
synthetic A/B simulator.
"""

from .behavior import (
    BehaviorModel,
    FactorTable,
    MissingTypeError,
    apply_kappa,
    estimate_factors,
    fit_behavior_model,
    monotone_project,
    summarize_types,
)
from .calibrate import CalibrationMap, apply_calibration, fit_isotonic, pav, refresh
from .core import (
    DEFAULT_STREAK_BOUNDS,
    USER_TYPES,
    NotificationEvent,
    SendLimitConfig,
    SolverConfig,
    advance_streak,
    clamp_streak,
    streak_after_skip,
)
from .ingest import (
    FlatRecord,
    LogParseError,
    UserBaseline,
    UserLog,
    build_dataset,
    estimate_baseline,
    flatten,
    read_log,
    split_halves,
)
from .policy import (
    DecisionContext,
    HeuristicThresholds,
    decide_heuristic,
    decide_no_filter,
    decide_rl,
)
from .sim import (
    ExperimentReport,
    SimConfig,
    SimUser,
    Treatment,
    TreatmentResult,
    events_to_jsonl,
    fit_sim_calibration,
    generate_population,
    ramp_factor_table,
    run_experiment,
    simulate_pass,
    warmup_events,
)
from .solver import (
    NEVER_SEND,
    PolicyTable,
    find_threshold,
    q_send,
    q_skip,
    solve_policy,
    state_value,
)

__version__ = "0.1.0"

__all__ = [
    "BehaviorModel", "CalibrationMap", "DecisionContext", "DEFAULT_STREAK_BOUNDS",
    "ExperimentReport", "FactorTable", "FlatRecord", "HeuristicThresholds",
    "LogParseError", "MissingTypeError", "NEVER_SEND", "NotificationEvent",
    "PolicyTable", "SendLimitConfig", "SimConfig", "SimUser", "SolverConfig",
    "Treatment", "TreatmentResult", "USER_TYPES", "UserBaseline", "UserLog",
    "advance_streak", "apply_calibration", "apply_kappa", "build_dataset",
    "clamp_streak", "decide_heuristic", "decide_no_filter", "decide_rl",
    "estimate_baseline", "estimate_factors", "events_to_jsonl", "find_threshold",
    "fit_behavior_model", "fit_isotonic", "fit_sim_calibration", "flatten",
    "generate_population", "monotone_project", "pav", "q_send", "q_skip",
    "ramp_factor_table", "read_log", "refresh", "run_experiment", "simulate_pass",
    "solve_policy", "split_halves", "state_value", "streak_after_skip",
    "summarize_types", "warmup_events",
]
