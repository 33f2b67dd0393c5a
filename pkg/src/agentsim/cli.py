"""Command-line front end.

Commands:
    gen       generate a synthetic workload and save it as a trace file
    run       run one simulation and write a report directory
    sweep     run the cross product of sweep axes and write a comparison table
    validate  check a configuration file without running

Exit codes: 0 success, 2 validation failure, 3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .config import SWEEP_AXES, ExperimentConfig, apply_cell, load_config, _norm_enum
from .engine import run_simulation
from .errors import ConfigurationError, TraceFormatError
from .metrics import SUMMARY_FIELDS, format_value, summary_line, export_report
from .workload import generate_workload, save_trace

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_PARTIAL = 3


def _add_common_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment configuration file (YAML)")
    parser.add_argument("--seed", type=int, help="override the workload seed")
    parser.add_argument("--rate", type=float, help="override workload arrival rate (agents/s)")
    parser.add_argument("--duration", type=float, help="override simulated duration (s)")
    parser.add_argument("--instances", type=int, help="number of serving instances")
    parser.add_argument("--trace", help="replay a trace file instead of generating")
    parser.add_argument(
        "--controller", choices=["off", "fixed", "context-aware"], help="controller variant"
    )
    parser.add_argument("--level-mhz", type=float, help="pinned level for --controller fixed")
    parser.add_argument("--slo", type=float, help="SLO target (tokens/s per agent)")
    parser.add_argument("--alpha", type=float, help="context-pressure threshold")
    parser.add_argument("--beta", type=float, help="admission hard cap")
    parser.add_argument("--gamma", type=float, help="admission resume threshold")
    parser.add_argument("--epoch", type=float, help="control epoch length (s)")
    parser.add_argument(
        "--policy", choices=["context-aware", "round-robin", "least-loaded"], help="routing policy"
    )
    parser.add_argument("--capacity", type=int, help="instance token capacity")
    parser.add_argument(
        "--no-thrash-avoidance",
        action="store_true",
        help="ablation: keep the frequency policy but skip admission control",
    )
    parser.add_argument(
        "--no-boost", action="store_true", help="ablation: disable SLO-based frequency boosting"
    )


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    workload = config.workload
    if getattr(args, "seed", None) is not None:
        workload = replace(workload, seed=args.seed)
    if getattr(args, "rate", None) is not None:
        workload = replace(workload, arrival_rate=args.rate)
    if getattr(args, "duration", None) is not None:
        workload = replace(workload, duration=args.duration)
    config.workload = workload
    if getattr(args, "duration", None) is not None:
        config.sim_duration = args.duration
    if getattr(args, "trace", None) is not None:
        config.trace_path = args.trace
    if getattr(args, "instances", None) is not None:
        config.instance_count = args.instances
    if getattr(args, "capacity", None) is not None:
        config.instance = replace(config.instance, capacity_tokens=args.capacity)

    controller = config.controller
    if getattr(args, "controller", None) is not None:
        controller = replace(controller, variant=_norm_enum(args.controller))
    if getattr(args, "level_mhz", None) is not None:
        controller = replace(controller, fixed_level_mhz=args.level_mhz)
    if getattr(args, "slo", None) is not None:
        controller = replace(controller, slo_target=args.slo)
    if getattr(args, "alpha", None) is not None:
        controller = replace(controller, alpha=args.alpha)
    if getattr(args, "beta", None) is not None:
        controller = replace(controller, beta=args.beta)
    if getattr(args, "gamma", None) is not None:
        controller = replace(controller, gamma=args.gamma)
    if getattr(args, "epoch", None) is not None:
        controller = replace(controller, epoch_length=args.epoch)
    if getattr(args, "no_thrash_avoidance", False):
        controller = replace(controller, thrash_avoidance=False)
    if getattr(args, "no_boost", False):
        controller = replace(controller, boost_enabled=False)
    config.controller = controller

    if getattr(args, "policy", None) is not None:
        config.router = replace(config.router, policy=_norm_enum(args.policy))
    return config


def cmd_gen(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    config.workload.validate()
    agents = generate_workload(config.workload)
    save_trace(agents, args.out)
    turns = [len(a.turns) for a in agents]
    mean_turns = sum(turns) / len(turns) if turns else 0.0
    max_turns = max(turns) if turns else 0
    print(f"generated {len(agents)} agents -> {args.out}")
    print(f"turns per agent: mean {mean_turns:.1f}, max {max_turns}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    errors = config.validate_collect()
    if errors:
        for error in errors:
            print(f"error: {error}", file=sys.stderr)
        return EXIT_INVALID
    result = run_simulation(config.to_sim_config(), config_echo=config.resolved_dict())
    export_report(result, args.out)
    print(summary_line(result.system))
    print(
        f"agents: arrived {result.arrived}, completed {result.completed}; "
        f"report -> {args.out}"
    )
    return EXIT_OK


def _sweep_cells(config: ExperimentConfig, args: argparse.Namespace) -> list[dict]:
    axes: dict[str, list] = {}
    cli_axes = {
        "level_mhz": args.axis_level_mhz,
        "arrival_rate": args.axis_rate,
        "slo_target": args.axis_slo,
        "policy": args.axis_policy,
    }
    for axis in SWEEP_AXES:
        values = cli_axes.get(axis)
        if values is None:
            values = config.sweep.get(axis)
        if values is not None:
            if not values:
                raise ConfigurationError(f"sweep.{axis}: axis must be non-empty")
            axes[axis] = list(values)
    if not axes:
        raise ConfigurationError("sweep: at least one non-empty axis is required")
    names = [axis for axis in SWEEP_AXES if axis in axes]
    cells = []
    for combo in itertools.product(*(axes[name] for name in names)):
        cells.append(dict(zip(names, combo)))
    return cells


def _run_cell(payload: tuple[ExperimentConfig, dict]) -> tuple[dict, dict | None, str | None]:
    base, cell = payload
    try:
        config = apply_cell(base, cell)
        errors = config.validate_collect()
        if errors:
            return cell, None, "; ".join(errors)
        result = run_simulation(config.to_sim_config(), config_echo=config.resolved_dict())
        summary = {name: getattr(result.system, name) for name in SUMMARY_FIELDS}
        summary["arrived"] = result.arrived
        summary["completed"] = result.completed
        return cell, summary, None
    except Exception as exc:  # cell failures are recorded, the sweep continues
        return cell, None, str(exc)


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    try:
        cells = _sweep_cells(config, args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    axis_names = [axis for axis in SWEEP_AXES if axis in cells[0]]
    payloads = [(config, cell) for cell in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_cell, payloads))
    else:
        outcomes = [_run_cell(p) for p in payloads]

    os.makedirs(args.out, exist_ok=True)
    table_path = os.path.join(args.out, "sweep.csv")
    header = axis_names + list(SUMMARY_FIELDS) + ["arrived", "completed", "status", "error"]
    failed = 0
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for index, (cell, summary, error) in enumerate(outcomes):
            values = [format_value(cell[name]) for name in axis_names]
            if summary is None:
                failed += 1
                values += ["nan"] * (len(SUMMARY_FIELDS) + 2) + ["error", (error or "").replace(",", ";")]
                print(f"[{index + 1}/{len(outcomes)}] {cell}: ERROR {error}")
            else:
                values += [format_value(summary[name]) for name in SUMMARY_FIELDS]
                values += [str(summary["arrived"]), str(summary["completed"]), "ok", ""]
                print(f"[{index + 1}/{len(outcomes)}] {cell}: {summary_line_from(summary)}")
            fh.write(",".join(values) + "\n")
    print(f"sweep table -> {table_path}")
    return EXIT_PARTIAL if failed else EXIT_OK


def summary_line_from(summary: dict) -> str:
    return " ".join(f"{name}={format_value(summary[name])}" for name in SUMMARY_FIELDS)


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    errors = config.validate_collect()
    if errors:
        for error in errors:
            print(f"error: {error}", file=sys.stderr)
        return EXIT_INVALID
    print("configuration OK")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentsim",
        description="Discrete-event simulator for power-aware agentic LLM serving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a workload trace file")
    _add_common_overrides(p_gen)
    p_gen.add_argument("--out", required=True, help="output trace path (JSON lines)")
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run one simulation")
    _add_common_overrides(p_run)
    p_run.add_argument("--out", required=True, help="report output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    _add_common_overrides(p_sweep)
    p_sweep.add_argument("--out", required=True, help="sweep output directory")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel cells")
    p_sweep.add_argument(
        "--axis-level-mhz", type=float, nargs="+", help="frequency-cap axis (MHz values)"
    )
    p_sweep.add_argument("--axis-rate", type=float, nargs="+", help="arrival-rate axis")
    p_sweep.add_argument("--axis-slo", type=float, nargs="+", help="SLO-target axis")
    p_sweep.add_argument("--axis-policy", nargs="+", help="routing-policy axis")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="validate a configuration file")
    p_val.add_argument("--config", help="experiment configuration file (YAML)")
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
