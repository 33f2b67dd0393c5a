"""Deterministic discrete-event simulation loop.

The engine advances a simulated clock through a single event queue:
agent arrivals, turn completions, tool-gap expirations, per-epoch controller
invocations, and time-series sampling.  Ties at equal timestamps break by a
fixed kind priority (epoch, completion, tool, issue, arrival, sample) and
then by schedule order, so a run is a pure function of its configuration.

Execution model: an admitted agent's turns run to completion one at a time,
separated by tool gaps.  A turn's duration is set by the frequency level in
force when it starts; if the level or the thrash state changes mid-turn, the
remaining fraction of its token work is re-timed at the new rate.  Power is
integrated exactly as a piecewise-constant function that changes only when
an instance transitions between idle and active or switches level while
active.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import metrics as metrics_mod
from .controller import ControllerConfig, control_epoch
from .errors import ConfigurationError, SimulationError
from .instance import (
    AgentRuntimeState,
    InstanceConfig,
    InstanceState,
    complete_agent,
    grow_context,
    service_time,
)
from .metrics import AgentMetrics, SystemMetrics
from .router import (
    RouterConfig,
    RouterState,
    assign_agent,
    maybe_reassign,
    migrate_context,
    route_least_loaded,
    route_round_robin,
)
from .workload import AgentTrace, TurnRecord, WorkloadSpec, generate_workload, load_trace

# Tie-break priority for events at equal timestamps.
_PRIO_EPOCH = 0
_PRIO_COMPLETE = 1
_PRIO_TOOL = 2
_PRIO_ISSUE = 3
_PRIO_ARRIVAL = 4
_PRIO_SAMPLE = 5


@dataclass
class SimConfig:
    """Full description of one simulation run."""

    workload: WorkloadSpec | None = None
    trace_path: str | None = None
    traces: list[AgentTrace] | None = None
    instance_count: int = 1
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    sim_duration: float = 3600.0
    record_interval: float = 1.0
    seed: int | None = None  # overrides workload.seed when set

    def validate(self) -> None:
        if self.instance_count < 1:
            raise ConfigurationError(f"instance_count: must be >= 1, got {self.instance_count}")
        if not self.sim_duration > 0:
            raise ConfigurationError(f"sim_duration: must be > 0, got {self.sim_duration}")
        if not self.record_interval > 0:
            raise ConfigurationError(f"record_interval: must be > 0, got {self.record_interval}")
        sources = sum(x is not None for x in (self.workload, self.trace_path, self.traces))
        if sources == 0:
            raise ConfigurationError("workload: either a workload spec or a trace source is required")
        if sources > 1:
            raise ConfigurationError("workload: provide exactly one of workload spec, trace_path, traces")
        if self.workload is not None:
            self.workload.validate()
        self.instance.validate()
        self.controller.validate(self.instance.frequency_table)
        self.router.validate()


@dataclass(frozen=True)
class TimeseriesRow:
    time: float
    instance_id: int
    context_usage: int
    level_index: int
    level_mhz: float
    power_watts: float
    pending_depth: int
    running_requests: int
    thrashing: int


@dataclass(frozen=True)
class DecisionRow:
    time: float
    instance_id: int
    usage_observed: int
    frequency_level: int
    boosted: bool
    deferred: bool
    admitted_count: int
    min_throughput: float | None
    pending_depth: int


@dataclass(frozen=True)
class AgentResult:
    agent_id: str
    arrival_time: float
    completion_time: float | None
    completed: bool
    turns_total: int
    turns_completed: int
    max_context_tokens: int
    total_llm_time: float
    total_decode_tokens: int
    throughput: float | None
    final_instance: int | None
    migrations: int
    # disposition at window end: pending | waiting_start | running | tool | done
    final_phase: str
    # (turn_index, issue_time, completion_time) per completed turn
    turn_log: tuple[tuple[int, float, float], ...]


@dataclass
class SimulationResult:
    sim_duration: float
    instance_count: int
    capacity_tokens: int
    arrived: int
    completed: int
    agents: list[AgentResult]
    timeseries: list[TimeseriesRow]
    decisions: list[DecisionRow]
    instance_energy: dict[int, float]
    instance_thrash_time: dict[int, float]
    final_pending: dict[int, int]
    final_usage: dict[int, int]
    system: SystemMetrics
    config_echo: dict

    def agent_metrics(self) -> list[AgentMetrics]:
        return [
            AgentMetrics(
                agent_id=a.agent_id,
                throughput=a.throughput,
                completed=a.completed,
                turn_count=a.turns_completed,
                max_context_tokens=a.max_context_tokens,
                total_llm_time=a.total_llm_time,
                total_decode_tokens=a.total_decode_tokens,
            )
            for a in self.agents
        ]

    def power_series(self) -> dict[int, list[tuple[float, float]]]:
        series: dict[int, list[tuple[float, float]]] = {
            row.instance_id: [] for row in self.timeseries
        }
        for row in self.timeseries:
            series[row.instance_id].append((row.time, row.power_watts))
        return series

    def usage_series(self) -> dict[int, list[tuple[float, float]]]:
        series: dict[int, list[tuple[float, float]]] = {
            row.instance_id: [] for row in self.timeseries
        }
        for row in self.timeseries:
            series[row.instance_id].append((row.time, float(row.context_usage)))
        return series


def integrate_power(
    series: Mapping[int, Sequence[tuple[float, float]]], window: float
) -> float:
    """Average system watts over ``[0, window]`` for piecewise-constant
    per-instance power series; exact, no quadrature error."""
    if not window > 0:
        raise ConfigurationError(f"window: must be > 0, got {window}")
    total = 0.0
    for instance_id, points in series.items():
        if not points or points[0][0] > 0.0:
            raise SimulationError(
                f"power series for instance {instance_id} does not cover the window start"
            )
        for (t0, w0), (t1, _w1) in zip(points, points[1:]):
            if t1 < t0:
                raise SimulationError(
                    f"power series for instance {instance_id} is not time-ordered"
                )
            total += w0 * (min(t1, window) - min(t0, window))
        last_time, last_watts = points[-1]
        if last_time < window:
            total += last_watts * (window - last_time)
    return total / window


@dataclass
class _RunningTurn:
    agent_id: str
    turn_index: int
    turn: TurnRecord
    issue_time: float
    anchor: float
    remaining_frac: float
    done_time: float
    version: int


@dataclass
class _Agent:
    trace: AgentTrace
    rt: AgentRuntimeState
    phase: str = "arriving"
    completion_time: float | None = None
    migrations: int = 0
    not_before: float = 0.0
    pending_issue_time: float | None = None
    turn_log: list[tuple[int, float, float]] = field(default_factory=list)


class _Instance:
    """Engine-side physics wrapper around one InstanceState."""

    def __init__(self, state: InstanceState, watts: float):
        self.state = state
        self.running: dict[str, _RunningTurn] = {}
        self.watts = watts
        self.last_power_time = 0.0
        self.energy = 0.0
        self.thrash_flag = False
        self.thrash_since = 0.0
        self.thrash_time = 0.0
        self.rate_key: tuple | None = None
        self.last_row: tuple | None = None


class _Simulation:
    def __init__(self, config: SimConfig, config_echo: dict | None):
        config.validate()
        self.config = config
        self.table = config.instance.frequency_table
        self.capacity = config.instance.capacity_tokens
        self.traces = self._resolve_traces(config)
        self.now = 0.0
        self.heap: list[tuple] = []
        self._seq = itertools.count()
        self._versions = itertools.count()
        top = self.table.num_levels
        self.instance_ids = list(range(1, config.instance_count + 1))
        self.instances = {
            iid: _Instance(
                InstanceState(instance_id=iid, capacity_tokens=self.capacity, current_level=top),
                watts=self.table.level(top).idle_power,
            )
            for iid in self.instance_ids
        }
        self.router_state = RouterState(instance_ids=list(self.instance_ids))
        self.agents: dict[str, _Agent] = {}
        self.arrived = 0
        self.completed = 0
        self.timeseries: list[TimeseriesRow] = []
        self.decisions: list[DecisionRow] = []
        self.config_echo = config_echo if config_echo is not None else _config_echo(config)

    @staticmethod
    def _resolve_traces(config: SimConfig) -> list[AgentTrace]:
        if config.traces is not None:
            traces = list(config.traces)
        elif config.trace_path is not None:
            traces = load_trace(config.trace_path)
        else:
            spec = config.workload
            if config.seed is not None and config.seed != spec.seed:
                from dataclasses import replace

                spec = replace(spec, seed=config.seed)
            traces = generate_workload(spec)
        seen: set[str] = set()
        for trace in traces:
            if trace.agent_id in seen:
                raise ConfigurationError(f"duplicate agent_id {trace.agent_id!r} in workload")
            seen.add(trace.agent_id)
        return traces

    # -- scheduling ---------------------------------------------------------

    def _push(self, time: float, priority: int, tag: str, payload: tuple) -> None:
        heapq.heappush(self.heap, (time, priority, next(self._seq), tag, payload))

    def _schedule_initial(self) -> None:
        duration = self.config.sim_duration
        epoch = self.config.controller.epoch_length
        k = 0
        while k * epoch < duration:
            self._push(k * epoch, _PRIO_EPOCH, "epoch", ())
            k += 1
        interval = self.config.record_interval
        k = 1
        while k * interval < duration:
            self._push(k * interval, _PRIO_SAMPLE, "sample", ())
            k += 1
        for index, trace in enumerate(self.traces):
            if trace.arrival_time < duration:
                self._push(trace.arrival_time, _PRIO_ARRIVAL, "arrival", (index,))

    # -- physics helpers ----------------------------------------------------

    def _update_power(self, inst: _Instance) -> None:
        level = self.table.level(inst.state.current_level)
        watts = level.active_power if inst.state.running_requests > 0 else level.idle_power
        if watts != inst.watts:
            inst.energy += inst.watts * (self.now - inst.last_power_time)
            inst.last_power_time = self.now
            inst.watts = watts

    def _sync_thrash(self, inst: _Instance) -> None:
        flag = inst.state.thrashing
        if flag != inst.thrash_flag:
            if inst.thrash_flag:
                inst.thrash_time += self.now - inst.thrash_since
            else:
                inst.thrash_since = self.now
            inst.thrash_flag = flag

    def _rate_key(self, inst: _Instance) -> tuple:
        key: tuple = (inst.state.current_level, inst.state.thrashing)
        if self.config.instance.interference_coeff > 0:
            key += (inst.state.running_requests,)
        return key

    def _conditions_changed(self, inst: _Instance) -> None:
        """Re-time in-flight turns when the effective token rate changed:
        the remaining fraction of each turn's work is re-priced at the new
        conditions and its completion event re-scheduled."""
        key = self._rate_key(inst)
        if key == inst.rate_key:
            return
        inst.rate_key = key
        if not inst.running:
            return
        level = self.table.level(inst.state.current_level)
        for rt in inst.running.values():
            segment = rt.done_time - rt.anchor
            if segment > 0:
                fraction_done = (self.now - rt.anchor) / segment
                rt.remaining_frac *= max(0.0, 1.0 - fraction_done)
            agent = self.agents[rt.agent_id]
            full = service_time(
                rt.turn,
                level,
                agent.rt.context_tokens,
                inst.state.running_requests,
                inst.state.thrashing,
                self.config.instance,
            )
            rt.anchor = self.now
            rt.done_time = self.now + rt.remaining_frac * full
            rt.version = next(self._versions)
            self._push(rt.done_time, _PRIO_COMPLETE, "complete", (rt.agent_id, rt.version))

    def _start_turn(self, inst: _Instance, agent: _Agent, issue_time: float) -> None:
        index = agent.rt.completed_steps
        turn = agent.trace.turns[index]
        inst.state.running_requests += 1
        self._conditions_changed(inst)
        level = self.table.level(inst.state.current_level)
        duration = service_time(
            turn,
            level,
            agent.rt.context_tokens,
            inst.state.running_requests,
            inst.state.thrashing,
            self.config.instance,
        )
        rt = _RunningTurn(
            agent_id=agent.rt.agent_id,
            turn_index=index,
            turn=turn,
            issue_time=issue_time,
            anchor=self.now,
            remaining_frac=1.0,
            done_time=self.now + duration,
            version=next(self._versions),
        )
        inst.running[agent.rt.agent_id] = rt
        agent.phase = "running"
        self._push(rt.done_time, _PRIO_COMPLETE, "complete", (rt.agent_id, rt.version))
        self._update_power(inst)

    def _mark_row(self, inst: _Instance, force: bool = False) -> None:
        state = inst.state
        key = (
            state.context_usage,
            state.current_level,
            inst.watts,
            len(state.pending),
            state.running_requests,
            state.thrashing,
        )
        if not force and key == inst.last_row:
            return
        inst.last_row = key
        level = self.table.level(state.current_level)
        self.timeseries.append(
            TimeseriesRow(
                time=self.now,
                instance_id=state.instance_id,
                context_usage=state.context_usage,
                level_index=state.current_level,
                level_mhz=level.nominal_mhz,
                power_watts=inst.watts,
                pending_depth=len(state.pending),
                running_requests=state.running_requests,
                thrashing=int(state.thrashing),
            )
        )

    def _usages(self) -> dict[int, int]:
        return {iid: self.instances[iid].state.context_usage for iid in self.instance_ids}

    # -- event handlers -----------------------------------------------------

    def _on_epoch(self, payload: tuple) -> None:
        for iid in self.instance_ids:
            inst = self.instances[iid]
            admitted_agents: list[AgentRuntimeState] = []

            def level_hook(_level: int, inst: _Instance = inst) -> None:
                self._conditions_changed(inst)
                self._update_power(inst)

            def admit_hook(agent_rt: AgentRuntimeState, bucket=admitted_agents) -> None:
                bucket.append(agent_rt)

            decision = control_epoch(
                inst.state,
                self.config.controller,
                self.table,
                on_level_applied=level_hook,
                on_admitted=admit_hook,
            )
            # Resumed contexts may have pushed usage over capacity.
            self._sync_thrash(inst)
            self._conditions_changed(inst)
            for agent_rt in admitted_agents:
                agent = self.agents[agent_rt.agent_id]
                issue_time = (
                    agent.pending_issue_time if agent.pending_issue_time is not None else self.now
                )
                agent.pending_issue_time = None
                if self.now < agent.not_before:
                    agent.phase = "waiting_start"
                    self._push(
                        agent.not_before,
                        _PRIO_ISSUE,
                        "delayed_start",
                        (agent_rt.agent_id, issue_time),
                    )
                else:
                    self._start_turn(inst, agent, issue_time)
            self._update_power(inst)
            self.decisions.append(
                DecisionRow(
                    time=self.now,
                    instance_id=iid,
                    usage_observed=decision.usage_observed,
                    frequency_level=decision.frequency_level,
                    boosted=decision.boosted,
                    deferred=decision.deferred,
                    admitted_count=len(decision.admitted),
                    min_throughput=decision.min_throughput,
                    pending_depth=len(inst.state.pending),
                )
            )
            self._mark_row(inst)

    def _on_arrival(self, payload: tuple) -> None:
        (index,) = payload
        trace = self.traces[index]
        rt = AgentRuntimeState(agent_id=trace.agent_id)
        agent = _Agent(trace=trace, rt=rt)
        self.agents[trace.agent_id] = agent
        self.arrived += 1
        policy = self.config.router.policy
        if policy == "round_robin":
            iid = route_round_robin(rt, self.router_state)
        elif policy == "least_loaded":
            iid = route_least_loaded(rt, self._usages(), self.router_state)
        else:
            iid = assign_agent(rt, self._usages(), self.capacity, self.config.router, self.router_state)
        inst = self.instances[iid]
        inst.state.pending.append(rt)
        agent.phase = "pending"
        self._mark_row(inst)

    def _on_complete(self, payload: tuple) -> None:
        agent_id, version = payload
        agent = self.agents[agent_id]
        iid = agent.rt.instance_id
        inst = self.instances[iid]
        rt = inst.running.get(agent_id)
        if rt is None or rt.version != version:
            return  # superseded by a re-timing
        del inst.running[agent_id]
        inst.state.running_requests -= 1
        llm_time = self.now - rt.issue_time
        grow_context(agent.rt, rt.turn, llm_time=llm_time)
        inst.state.context_usage += rt.turn.prefill_tokens + rt.turn.decode_tokens
        agent.turn_log.append((rt.turn_index, rt.issue_time, self.now))
        if agent.rt.completed_steps == len(agent.trace.turns):
            complete_agent(inst.state, agent_id)
            agent.phase = "done"
            agent.completion_time = self.now
            self.completed += 1
        else:
            agent.phase = "tool"
            self._push(self.now + rt.turn.tool_time, _PRIO_TOOL, "tool", (agent_id,))
        inst.state.refresh_thrashing()
        self._sync_thrash(inst)
        self._conditions_changed(inst)
        self._update_power(inst)
        self._mark_row(inst)

    def _on_tool(self, payload: tuple) -> None:
        (agent_id,) = payload
        agent = self.agents[agent_id]
        source_id = agent.rt.instance_id
        source = self.instances[source_id]
        target_id = None
        if self.config.router.policy == "context_aware":
            target_id = maybe_reassign(
                agent.rt, self._usages(), self.config.router, self.router_state
            )
        if target_id is None:
            self._start_turn(source, agent, issue_time=self.now)
            self._mark_row(source)
            return
        target = self.instances[target_id]
        agent.migrations += 1
        migrate_context(agent.rt, source.state, target.state)
        agent.phase = "pending"
        agent.pending_issue_time = self.now
        agent.not_before = self.now + self.config.router.migration_delay
        self._sync_thrash(source)
        self._conditions_changed(source)
        self._update_power(source)
        self._mark_row(source)
        self._mark_row(target)

    def _on_delayed_start(self, payload: tuple) -> None:
        agent_id, issue_time = payload
        agent = self.agents[agent_id]
        inst = self.instances[agent.rt.instance_id]
        self._start_turn(inst, agent, issue_time)
        self._mark_row(inst)

    def _on_sample(self, payload: tuple) -> None:
        for iid in self.instance_ids:
            self._mark_row(self.instances[iid], force=True)

    # -- main loop ----------------------------------------------------------

    def run(self) -> SimulationResult:
        self._schedule_initial()
        for iid in self.instance_ids:
            self._mark_row(self.instances[iid], force=True)
        duration = self.config.sim_duration
        handlers = {
            "epoch": self._on_epoch,
            "arrival": self._on_arrival,
            "complete": self._on_complete,
            "tool": self._on_tool,
            "delayed_start": self._on_delayed_start,
            "sample": self._on_sample,
        }
        while self.heap:
            time, _priority, _seq, tag, payload = heapq.heappop(self.heap)
            if time > duration:
                break
            self.now = time
            handlers[tag](payload)
        self.now = duration
        for iid in self.instance_ids:
            inst = self.instances[iid]
            inst.energy += inst.watts * (duration - inst.last_power_time)
            inst.last_power_time = duration
            if inst.thrash_flag:
                inst.thrash_time += duration - inst.thrash_since
                inst.thrash_since = duration
            self._mark_row(inst, force=True)
        return self._build_result()

    def _build_result(self) -> SimulationResult:
        duration = self.config.sim_duration
        agent_rows: list[AgentResult] = []
        for agent in self.agents.values():
            rt = agent.rt
            throughput = (
                rt.decode_tokens_total / rt.llm_time_total if rt.llm_time_total > 0 else None
            )
            agent_rows.append(
                AgentResult(
                    agent_id=rt.agent_id,
                    arrival_time=agent.trace.arrival_time,
                    completion_time=agent.completion_time,
                    completed=agent.phase == "done",
                    turns_total=len(agent.trace.turns),
                    turns_completed=rt.completed_steps,
                    max_context_tokens=rt.max_context_tokens,
                    total_llm_time=rt.llm_time_total,
                    total_decode_tokens=rt.decode_tokens_total,
                    throughput=throughput,
                    final_instance=rt.instance_id,
                    migrations=agent.migrations,
                    final_phase=agent.phase,
                    turn_log=tuple(agent.turn_log),
                )
            )
        total_energy = sum(self.instances[iid].energy for iid in self.instance_ids)
        total_thrash = sum(self.instances[iid].thrash_time for iid in self.instance_ids)
        agent_metrics = [
            AgentMetrics(
                agent_id=a.agent_id,
                throughput=a.throughput,
                completed=a.completed,
                turn_count=a.turns_completed,
                max_context_tokens=a.max_context_tokens,
                total_llm_time=a.total_llm_time,
                total_decode_tokens=a.total_decode_tokens,
            )
            for a in agent_rows
        ]
        system = SystemMetrics(
            slo_attainment=metrics_mod.slo_attainment(
                agent_metrics, self.config.controller.slo_target
            ),
            p5_throughput=metrics_mod.percentile_throughput(agent_metrics, 0.05),
            job_throughput=self.completed / duration,
            average_power=total_energy / duration,
            energy=total_energy,
            thrash_fraction=total_thrash / (duration * len(self.instance_ids)),
        )
        return SimulationResult(
            sim_duration=duration,
            instance_count=self.config.instance_count,
            capacity_tokens=self.capacity,
            arrived=self.arrived,
            completed=self.completed,
            agents=agent_rows,
            timeseries=self.timeseries,
            decisions=self.decisions,
            instance_energy={iid: self.instances[iid].energy for iid in self.instance_ids},
            instance_thrash_time={
                iid: self.instances[iid].thrash_time for iid in self.instance_ids
            },
            final_pending={
                iid: len(self.instances[iid].state.pending) for iid in self.instance_ids
            },
            final_usage={
                iid: self.instances[iid].state.context_usage for iid in self.instance_ids
            },
            system=system,
            config_echo=self.config_echo,
        )


def _config_echo(config: SimConfig) -> dict:
    """Plain deterministic dict describing the run, for report echoing."""
    echo: dict = {
        "instance_count": config.instance_count,
        "sim_duration": config.sim_duration,
        "record_interval": config.record_interval,
        "seed": config.seed,
        "instance": {
            "capacity_tokens": config.instance.capacity_tokens,
            "thrash_mode": config.instance.thrash_mode,
            "thrash_latency_factor": config.instance.thrash_latency_factor,
            "interference_coeff": config.instance.interference_coeff,
            "frequency_table": [
                {
                    "mhz": lvl.nominal_mhz,
                    "prefill_rate": lvl.prefill_rate,
                    "decode_rate": lvl.decode_rate,
                    "active_power": lvl.active_power,
                    "idle_power": lvl.idle_power,
                }
                for lvl in config.instance.frequency_table.levels
            ],
        },
        "controller": {
            "variant": config.controller.variant,
            "alpha": config.controller.alpha,
            "beta": config.controller.beta,
            "gamma": config.controller.gamma,
            "slo_target": config.controller.slo_target,
            "epoch_length": config.controller.epoch_length,
            "boost_enabled": config.controller.boost_enabled,
            "thrash_avoidance": config.controller.thrash_avoidance,
            "fixed_level_mhz": config.controller.fixed_level_mhz,
        },
        "router": {
            "policy": config.router.policy,
            "consolidation_threshold": config.router.consolidation_threshold,
            "reassign_interval": config.router.reassign_interval,
            "imbalance_ratio": config.router.imbalance_ratio,
            "migration_delay": config.router.migration_delay,
        },
    }
    if config.trace_path is not None:
        echo["workload"] = {"trace_path": config.trace_path}
    elif config.workload is not None:
        spec = config.workload
        echo["workload"] = {
            "arrival_rate": spec.arrival_rate,
            "arrival_process": spec.arrival_process,
            "duration": spec.duration,
            "seed": spec.seed,
            "prefill_growth_per_turn": spec.prefill_growth_per_turn,
            "turn_count": _dist_echo(spec.turn_count),
            "prefill_tokens": _dist_echo(spec.prefill_tokens),
            "decode_tokens": _dist_echo(spec.decode_tokens),
            "tool_time": _dist_echo(spec.tool_time),
        }
    else:
        echo["workload"] = {"inline_traces": len(config.traces or [])}
    return echo


def _dist_echo(dist) -> dict:
    return {
        "dist": dist.kind,
        "mean": dist.mean,
        "sigma": dist.sigma,
        "min": dist.minimum,
        "max": None if dist.maximum == float("inf") else dist.maximum,
    }


def run_simulation(config: SimConfig, config_echo: dict | None = None) -> SimulationResult:
    """Run one simulation; a pure function of the configuration."""
    return _Simulation(config, config_echo).run()
