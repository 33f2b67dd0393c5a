"""Evaluation metrics and report export.

All system-level values are reproducible from the exported raw tables by
straightforward recomputation (sorting, prefix sums), which the test suite
exercises as an independent oracle.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import yaml

from .errors import ConfigurationError, SimulationError

if TYPE_CHECKING:  # pragma: no cover
    from .engine import SimulationResult


@dataclass(frozen=True)
class AgentMetrics:
    """Per-agent outcome over the agent's full lifecycle."""

    agent_id: str
    throughput: float | None  # decode tokens per second of LLM time
    completed: bool
    turn_count: int
    max_context_tokens: int
    total_llm_time: float
    total_decode_tokens: int


@dataclass(frozen=True)
class SystemMetrics:
    """System-level aggregates over one simulation window."""

    slo_attainment: float | None
    p5_throughput: float | None
    job_throughput: float  # completed agents per second
    average_power: float  # watts, summed over instances
    energy: float  # joules over the window
    thrash_fraction: float  # share of instance-time spent above capacity


def slo_attainment(agents: Iterable[AgentMetrics], tau: float) -> float | None:
    """Fraction of completed agents whose lifecycle throughput meets ``tau``.

    Agents that did not complete within the window are excluded; an empty
    completion set yields None (undefined), never zero.
    """
    done = [a for a in agents if a.completed and a.throughput is not None]
    if not done:
        return None
    return sum(1 for a in done if a.throughput >= tau) / len(done)


def percentile_throughput(agents: Iterable[AgentMetrics], p: float) -> float | None:
    """Nearest-rank percentile of completed agents' throughputs."""
    if not 0 < p < 1:
        raise ConfigurationError(f"percentile: p must be in (0, 1), got {p}")
    values = sorted(a.throughput for a in agents if a.completed and a.throughput is not None)
    if not values:
        return None
    rank = math.ceil(p * len(values))
    return values[rank - 1]


def regime_classify(
    usage_series: Mapping[int, Sequence[tuple[float, float]]],
    capacity: float,
    window: float,
) -> tuple[dict[int, list[tuple[float, float, bool]]], float]:
    """Partition each instance's time into non-thrashing (usage <= capacity)
    and thrashing (usage > capacity) segments.

    Returns the per-instance segments and the thrashing share of total
    instance-time.
    """
    if not window > 0:
        raise ConfigurationError(f"window: must be > 0, got {window}")
    segments: dict[int, list[tuple[float, float, bool]]] = {}
    thrash_total = 0.0
    for instance_id, points in usage_series.items():
        if not points or points[0][0] > 0.0:
            raise SimulationError(
                f"usage series for instance {instance_id} does not cover the window start"
            )
        spans: list[tuple[float, float, bool]] = []

        def add(start: float, end: float, flag: bool, spans=spans) -> None:
            if end <= start:
                return
            if spans and spans[-1][2] == flag and spans[-1][1] == start:
                spans[-1] = (spans[-1][0], end, flag)
            else:
                spans.append((start, end, flag))

        for (t0, u0), (t1, _u1) in zip(points, points[1:]):
            add(min(t0, window), min(t1, window), u0 > capacity)
        last_time, last_usage = points[-1]
        if last_time < window:
            add(last_time, window, last_usage > capacity)
        segments[instance_id] = spans
        thrash_total += sum(end - start for start, end, flag in spans if flag)
    return segments, thrash_total / (window * len(usage_series))


# -- report files ------------------------------------------------------------

SUMMARY_FIELDS = (
    "slo_attainment",
    "p5_throughput",
    "job_throughput",
    "average_power",
    "energy",
    "thrash_fraction",
)

AGENT_FIELDS = (
    "agent_id",
    "completed",
    "throughput",
    "turn_count",
    "max_context_tokens",
    "total_llm_time",
    "total_decode_tokens",
    "arrival_time",
    "completion_time",
    "final_instance",
    "migrations",
    "final_phase",
)

TIMESERIES_FIELDS = (
    "time",
    "instance_id",
    "context_usage",
    "level_index",
    "level_mhz",
    "power_watts",
    "pending_depth",
    "running_requests",
    "thrashing",
)

DECISION_FIELDS = (
    "time",
    "instance_id",
    "usage_observed",
    "frequency_level",
    "boosted",
    "deferred",
    "admitted_count",
    "min_throughput",
    "pending_depth",
)


def format_value(value) -> str:
    """Render one report cell: floats at 6 significant digits, missing as nan."""
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def export_report(result: "SimulationResult", outdir: str) -> None:
    """Write the report directory: summary, per-agent table, time series,
    controller decisions, and the resolved configuration echo."""
    os.makedirs(outdir, exist_ok=True)
    system = result.system
    _write_csv(
        os.path.join(outdir, "summary.csv"),
        SUMMARY_FIELDS,
        [[getattr(system, name) for name in SUMMARY_FIELDS]],
    )
    _write_csv(
        os.path.join(outdir, "agents.csv"),
        AGENT_FIELDS,
        (
            [
                a.agent_id,
                a.completed,
                a.throughput,
                a.turns_completed,
                a.max_context_tokens,
                a.total_llm_time,
                a.total_decode_tokens,
                a.arrival_time,
                a.completion_time,
                a.final_instance,
                a.migrations,
                a.final_phase,
            ]
            for a in result.agents
        ),
    )
    _write_csv(
        os.path.join(outdir, "timeseries.csv"),
        TIMESERIES_FIELDS,
        (
            [
                r.time,
                r.instance_id,
                r.context_usage,
                r.level_index,
                r.level_mhz,
                r.power_watts,
                r.pending_depth,
                r.running_requests,
                r.thrashing,
            ]
            for r in result.timeseries
        ),
    )
    _write_csv(
        os.path.join(outdir, "decisions.csv"),
        DECISION_FIELDS,
        (
            [
                d.time,
                d.instance_id,
                d.usage_observed,
                d.frequency_level,
                d.boosted,
                d.deferred,
                d.admitted_count,
                d.min_throughput,
                d.pending_depth,
            ]
            for d in result.decisions
        ),
    )
    with open(os.path.join(outdir, "config.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(result.config_echo, fh, sort_keys=True, default_flow_style=False)


def summary_line(system: SystemMetrics) -> str:
    parts = [f"{name}={format_value(getattr(system, name))}" for name in SUMMARY_FIELDS]
    return " ".join(parts)
