"""Command-line pipeline driver.

One subcommand per offline stage -- fit, solve, calibrate, simulate -- with
files as the interchange between stages. Flags override values from an
optional JSON config file; the fully resolved configuration and a content
hash of every input file are echoed into each output artifact so runs can
be audited and reproduced.

Exit codes: 0 success, 1 validation error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys

import numpy as np

from .behavior import BehaviorModel, fit_behavior_model
from .calibrate import CalibrationMap, refresh
from .core import SolverConfig
from .ingest import DEFAULT_MIN_SAMPLES, LogParseError, read_log, build_dataset
from .policy import HeuristicThresholds, decide_heuristic, decide_no_filter, decide_rl
from .sim import SimConfig, Treatment, events_to_jsonl, run_experiment
from .solver import PolicyTable, solve_policy


class ValidationError(Exception):
    """Bad parameters; nothing was read or written."""


class DataError(Exception):
    """Inputs were unreadable, malformed, or insufficient."""


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, payload: dict) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_json(path, what: str) -> dict:
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {what} file {path}: {exc}") from exc


def _provenance(command: str, resolved: dict, inputs: dict) -> dict:
    return {"command": command, "config": resolved,
            "inputs": {str(p): _sha256(p) for p in inputs.values() if p}}


def _resolve(cli_value, file_config: dict, key: str, default):
    if cli_value is not None:
        return cli_value
    if key in file_config:
        return file_config[key]
    return default


def _read_log_checked(path):
    if not os.path.exists(path):
        raise DataError(f"log file not found: {path}")
    return read_log(path)


def cmd_fit(args) -> int:
    cfg = _load_json(args.config, "config") if args.config else {}
    raw_kappa = _resolve(args.kappa, cfg, "kappa", None)
    if raw_kappa is None:
        raise ValidationError("fit requires --kappa (or 'kappa' in the config file)")
    kappa = float(raw_kappa)
    if not 0.0 <= kappa <= 1.0:
        raise ValidationError(f"kappa must be in [0, 1], got {kappa}")
    min_samples = int(_resolve(args.min_samples, cfg, "min_samples", DEFAULT_MIN_SAMPLES))
    if min_samples < 1:
        raise ValidationError(f"min_samples must be >= 1, got {min_samples}")

    calibration = None
    if args.calibration:
        calibration = CalibrationMap.from_dict(_load_json(args.calibration, "calibration"))

    logs = _read_log_checked(args.log)
    records = build_dataset(logs, min_samples=min_samples)
    if not records:
        raise DataError(f"no users eligible: every user has fewer than "
                        f"{min_samples} first-half sends")
    model = fit_behavior_model(records, kappa=kappa, calibration=calibration)

    resolved = {"log": args.log, "kappa": kappa, "min_samples": min_samples,
                "calibration": args.calibration}
    payload = model.to_dict()
    payload["provenance"] = _provenance("fit", resolved,
                                        {"log": args.log, "calibration": args.calibration})
    _write_json(args.out, payload)

    n_cells = model.factors.bounds[1] - model.factors.bounds[0] + 1
    print(f"fitted behavior model on {len(records)} records "
          f"from {sum(1 for _ in logs)} users -> {args.out}")
    for i, c in enumerate(model.types):
        populated = int((model.factors.counts[i] > 0).sum())
        total = int(model.factors.counts[i].sum())
        print(f"  type {c}: {populated}/{n_cells} cells populated, "
              f"{total} records, mean open {model.type_mean_open[c]:.4f}")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_json(args.config, "config") if args.config else {}
    gamma = float(_resolve(args.gamma, cfg, "gamma", 0.9))
    horizon = int(_resolve(args.horizon, cfg, "horizon", 250))
    tolerance = float(_resolve(args.tolerance, cfg, "threshold_tolerance", 1e-6))
    if not 0.0 <= gamma < 1.0:
        raise ValidationError(f"gamma must be in [0, 1), got {gamma}")
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    if tolerance <= 0:
        raise ValidationError(f"threshold_tolerance must be > 0, got {tolerance}")

    if not os.path.exists(args.model):
        raise DataError(f"model file not found: {args.model}")
    model = BehaviorModel.load(args.model)
    solver_config = SolverConfig(gamma=gamma, horizon=horizon, kappa=model.kappa,
                                 streak_bounds=model.factors.bounds,
                                 threshold_tolerance=tolerance)
    table = solve_policy(model, solver_config)

    resolved = {"model": args.model, "gamma": gamma, "horizon": horizon,
                "threshold_tolerance": tolerance}
    payload = table.to_dict()
    payload["provenance"] = _provenance("solve", resolved, {"model": args.model})
    _write_json(args.out, payload)
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    _atomic_write(csv_path, table.to_csv_text())

    print(f"solved policy table ({len(table.types)} types x "
          f"{table.thresholds.shape[1]} streaks) -> {args.out}, {csv_path}")
    for i, c in enumerate(table.types):
        row = table.thresholds[i]
        finite = row[np.isfinite(row)]
        lo = finite.min() if finite.size else math.nan
        hi = finite.max() if finite.size else math.nan
        never = int(np.isinf(row).sum())
        print(f"  type {c}: thresholds in [{lo:.6f}, {hi:.6f}], never-send cells: {never}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_json(args.config, "config") if args.config else {}
    now = _resolve(args.now, cfg, "now", None)
    if now is None:
        raise ValidationError("calibrate requires --now (or 'now' in the config file)")
    window_hours = int(_resolve(args.window_hours, cfg, "window_hours", 24))
    if window_hours <= 0:
        raise ValidationError(f"window_hours must be > 0, got {window_hours}")

    logs = _read_log_checked(args.log)
    events = [e for log in logs for e in log.events]
    cmap = refresh(events, now=float(now), window_hours=window_hours, previous=None)
    if cmap is None:
        raise DataError(f"fewer than 2 events in the {window_hours}h window ending at {now}")

    resolved = {"log": args.log, "now": int(now), "window_hours": window_hours}
    payload = cmap.to_dict()
    payload["provenance"] = _provenance("calibrate", resolved, {"log": args.log})
    _write_json(args.out, payload)
    print(f"fitted calibration on window ({int(now) - window_hours * 3600}, {int(now)}] "
          f"-> {args.out}")
    print(f"  {len(cmap.breakpoints)} breakpoints, raw scores "
          f"[{cmap.breakpoints[0]:.4f}, {cmap.breakpoints[-1]:.4f}], "
          f"calibrated range [{cmap.values[0]:.4f}, {cmap.values[-1]:.4f}]")
    return 0


def _build_treatment(entry: dict, base_dir: str) -> Treatment:
    name = entry.get("name")
    if not name:
        raise ValidationError("every treatment needs a 'name'")
    kind = entry.get("policy")
    if kind == "no_filter":
        decide = decide_no_filter
    elif kind == "heuristic":
        if "thresholds" not in entry:
            raise ValidationError(f"treatment {name!r}: heuristic policy needs 'thresholds'")
        ks = HeuristicThresholds.from_dict(entry["thresholds"])
        decide = lambda ctx, _ks=ks: decide_heuristic(ctx, _ks)  # noqa: E731
    elif kind == "rl":
        if "table_path" not in entry:
            raise ValidationError(f"treatment {name!r}: rl policy needs 'table_path'")
        path = entry["table_path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if not os.path.exists(path):
            raise DataError(f"policy table file not found: {path}")
        table = PolicyTable.load(path)
        decide = lambda ctx, _t=table: decide_rl(ctx, _t)  # noqa: E731
    else:
        raise ValidationError(f"treatment {name!r}: unknown policy {kind!r} "
                              "(expected no_filter, heuristic, or rl)")
    return Treatment(name=name, decide=decide,
                     limit_adjustment=int(entry.get("limit_adjustment", 0)),
                     baseline=bool(entry.get("baseline", False)))


def cmd_simulate(args) -> int:
    sim_cfg_dict = _load_json(args.sim_config, "simulation config")
    if args.seed is not None:
        sim_cfg_dict["master_seed"] = args.seed
    try:
        config = SimConfig.from_dict(sim_cfg_dict)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"bad simulation config: {exc}") from exc

    treatments_doc = _load_json(args.treatments, "treatments")
    entries = treatments_doc if isinstance(treatments_doc, list) \
        else treatments_doc.get("treatments", [])
    if not entries:
        raise ValidationError("treatments file defines no treatments")
    base_dir = os.path.dirname(os.path.abspath(args.treatments))
    treatments = [_build_treatment(e, base_dir) for e in entries]

    if args.threads < 1:
        raise ValidationError(f"threads must be >= 1, got {args.threads}")
    report = run_experiment(config, treatments, threads=args.threads,
                            keep_events=args.emit_log)

    os.makedirs(args.out_dir, exist_ok=True)
    # thread count is an execution detail with no effect on results; keeping
    # it out of the echo keeps reports byte-identical across thread counts
    resolved = {"sim_config": args.sim_config, "treatments": args.treatments,
                "seed": config.master_seed}
    payload = report.to_dict()
    payload["config"] = config.to_dict()
    payload["provenance"] = _provenance("simulate", resolved,
                                        {"sim_config": args.sim_config,
                                         "treatments": args.treatments})
    report_path = os.path.join(args.out_dir, "report.json")
    _write_json(report_path, payload)
    table_text = report.to_table_text()
    _atomic_write(os.path.join(args.out_dir, "report_table.txt"), table_text)
    _atomic_write(os.path.join(args.out_dir, "report_per_type.csv"),
                  report.to_per_type_csv())
    if args.emit_log:
        for name, events in report.events.items():
            _atomic_write(os.path.join(args.out_dir, f"events_{name}.jsonl"),
                          events_to_jsonl(events))

    print(f"simulated {config.num_users} users x {config.days} days x "
          f"{config.passes_per_day} passes -> {args.out_dir}")
    print(table_text, end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="notif-ltv",
        description="Fit a streak-response model from send logs, solve a "
                    "long-term-value send policy, and evaluate it in a "
                    "deterministic synthetic A/B simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate the behavior model from a send log")
    fit.add_argument("log", help="JSON Lines send log")
    fit.add_argument("--config", help="JSON file with default parameters")
    fit.add_argument("--kappa", type=float, help="causal fraction in [0, 1]")
    fit.add_argument("--min-samples", type=int, dest="min_samples",
                     help=f"first-half sends needed to include a user "
                          f"(default {DEFAULT_MIN_SAMPLES})")
    fit.add_argument("--calibration", help="optional calibration map JSON; "
                                           "raw scores are used as-is without it")
    fit.add_argument("--out", required=True, help="output model JSON path")

    solve = sub.add_parser("solve", help="solve the send-threshold policy table")
    solve.add_argument("model", help="behavior model JSON from fit")
    solve.add_argument("--config", help="JSON file with default parameters")
    solve.add_argument("--gamma", type=float, help="discount factor in [0, 1) (default 0.9)")
    solve.add_argument("--horizon", type=int, help="decision opportunities (default 250)")
    solve.add_argument("--tolerance", type=float,
                       help="binary-search resolution (default 1e-6)")
    solve.add_argument("--out", required=True, help="output policy JSON path "
                                                    "(a .csv sibling is written too)")

    cal = sub.add_parser("calibrate", help="fit the isotonic calibration map")
    cal.add_argument("log", help="JSON Lines send log")
    cal.add_argument("--config", help="JSON file with default parameters")
    cal.add_argument("--now", type=int, help="window end, seconds since epoch")
    cal.add_argument("--window-hours", type=int, dest="window_hours",
                     help="lookback window (default 24)")
    cal.add_argument("--out", required=True, help="output calibration JSON path")

    simp = sub.add_parser("simulate", help="run an A/B experiment in the simulator")
    simp.add_argument("--sim-config", required=True, dest="sim_config",
                      help="simulation config JSON")
    simp.add_argument("--treatments", required=True, help="treatments JSON")
    simp.add_argument("--seed", type=int, help="override the config master seed")
    simp.add_argument("--threads", type=int, default=1,
                      help="worker threads (results are identical for any count)")
    simp.add_argument("--emit-log", action="store_true", dest="emit_log",
                      help="also write each treatment's event stream as JSONL")
    simp.add_argument("--out-dir", required=True, dest="out_dir",
                      help="directory for report artifacts")
    return parser


_HANDLERS = {"fit": cmd_fit, "solve": cmd_solve,
             "calibrate": cmd_calibrate, "simulate": cmd_simulate}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NOTIF_LTV_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, LogParseError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
