"""Single serving-instance model.

An instance serves LLM turns at a frequency-dependent token rate, retains
each ongoing agent's context in a token-capacity budget, and draws active
or idle power depending on whether any request is executing.  When the
aggregate resident context exceeds the token capacity the instance enters a
degraded thrash mode (re-computing or offloading cache) that multiplies the
LLM time of every in-flight request.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import ConfigurationError, SimulationError
from .workload import TurnRecord

THRASH_MODES = ("recompute", "offload")

DEFAULT_MHZ = (660, 810, 900, 1185, 1350, 1515, 1680)


@dataclass(frozen=True)
class FrequencyLevel:
    """One DVFS operating point."""

    nominal_mhz: float
    prefill_rate: float  # tokens/s processed in prefill
    decode_rate: float  # tokens/s generated in decode
    active_power: float  # watts while any request executes
    idle_power: float  # watts while no request executes


@dataclass(frozen=True)
class FrequencyTable:
    """Ordered DVFS levels; index 1 is the lowest level, index L the highest."""

    levels: tuple[FrequencyLevel, ...]

    def validate(self, min_activation_jump: float = 100.0) -> None:
        if len(self.levels) < 2:
            raise ConfigurationError("frequency_table: needs at least 2 levels")
        for i, lvl in enumerate(self.levels):
            if lvl.prefill_rate <= 0 or lvl.decode_rate <= 0:
                raise ConfigurationError(
                    f"frequency_table[{i}]: prefill/decode rates must be > 0"
                )
            if lvl.active_power < lvl.idle_power + min_activation_jump:
                raise ConfigurationError(
                    f"frequency_table[{i}]: active_power {lvl.active_power} below "
                    f"idle_power + {min_activation_jump} activation jump"
                )
        for prev, cur in zip(self.levels, self.levels[1:]):
            if cur.nominal_mhz <= prev.nominal_mhz:
                raise ConfigurationError("frequency_table: nominal_mhz must be strictly increasing")
            if (
                cur.prefill_rate < prev.prefill_rate
                or cur.decode_rate < prev.decode_rate
                or cur.active_power < prev.active_power
            ):
                raise ConfigurationError(
                    "frequency_table: rates and active_power must be non-decreasing with level"
                )

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def level(self, index: int) -> FrequencyLevel:
        """Return the level at 1-based ``index``."""
        if not 1 <= index <= len(self.levels):
            raise ConfigurationError(f"level index {index} out of range [1, {len(self.levels)}]")
        return self.levels[index - 1]

    def index_of_mhz(self, mhz: float) -> int:
        for i, lvl in enumerate(self.levels, start=1):
            if lvl.nominal_mhz == mhz:
                return i
        raise ConfigurationError(f"no frequency level at {mhz} MHz")


def default_frequency_table(
    mhz: tuple[float, ...] = DEFAULT_MHZ,
    top_prefill_rate: float = 20000.0,
    top_decode_rate: float = 80.0,
    idle_power: float = 50.0,
    min_active_power: float = 150.0,
    max_active_power: float = 400.0,
    rate_exponent: float = 0.7,
) -> FrequencyTable:
    """Default calibration: token rates scale sublinearly with clock
    (``(mhz/top)**rate_exponent``, reflecting memory-bound decode) and active
    power scales linearly between the lowest and highest level."""
    top = mhz[-1]
    span = mhz[-1] - mhz[0]
    levels = []
    for m in mhz:
        scale = (m / top) ** rate_exponent
        active = min_active_power + (max_active_power - min_active_power) * (m - mhz[0]) / span
        levels.append(
            FrequencyLevel(
                nominal_mhz=float(m),
                prefill_rate=top_prefill_rate * scale,
                decode_rate=top_decode_rate * scale,
                active_power=active,
                idle_power=idle_power,
            )
        )
    table = FrequencyTable(tuple(levels))
    table.validate()
    return table


@dataclass(frozen=True)
class InstanceConfig:
    """Static description of one serving instance."""

    capacity_tokens: int = 500_000
    frequency_table: FrequencyTable = field(default_factory=default_frequency_table)
    thrash_mode: str = "recompute"
    thrash_latency_factor: float = 3.0
    # Multiplicative slowdown per extra concurrent request:
    # interference(n) = 1 + coeff * (n - 1).  0 disables interference.
    interference_coeff: float = 0.0

    def validate(self) -> None:
        if self.capacity_tokens <= 0:
            raise ConfigurationError(f"capacity_tokens: must be > 0, got {self.capacity_tokens}")
        if self.thrash_mode not in THRASH_MODES:
            raise ConfigurationError(
                f"thrash_mode: must be one of {THRASH_MODES}, got {self.thrash_mode!r}"
            )
        if self.thrash_latency_factor < 1.0:
            raise ConfigurationError(
                f"thrash_latency_factor: must be >= 1, got {self.thrash_latency_factor}"
            )
        if self.interference_coeff < 0:
            raise ConfigurationError(
                f"interference_coeff: must be >= 0, got {self.interference_coeff}"
            )
        self.frequency_table.validate()

    def interference(self, concurrent: int) -> float:
        return 1.0 + self.interference_coeff * max(0, concurrent - 1)


@dataclass
class AgentRuntimeState:
    """Live accounting for one agent: resident context, progress counters,
    and achieved-throughput inputs."""

    agent_id: str
    context_tokens: int = 0
    completed_steps: int = 0
    decode_tokens_total: int = 0
    llm_time_total: float = 0.0
    steps_since_assignment: int = 0
    instance_id: int | None = None
    max_context_tokens: int = 0


@dataclass
class InstanceState:
    """Mutable state of one serving instance."""

    instance_id: int
    capacity_tokens: int
    current_level: int
    ongoing: dict[str, AgentRuntimeState] = field(default_factory=dict)
    pending: deque[AgentRuntimeState] = field(default_factory=deque)
    context_usage: int = 0
    thrashing: bool = False
    running_requests: int = 0

    @property
    def busy(self) -> bool:
        return self.running_requests > 0

    def refresh_thrashing(self) -> None:
        self.thrashing = self.context_usage > self.capacity_tokens


def service_time(
    turn: TurnRecord,
    level: FrequencyLevel,
    context_tokens: int,
    concurrent: int,
    thrashing: bool,
    config: InstanceConfig,
) -> float:
    """LLM time for one turn at the given operating conditions.

    ``context_tokens`` is accepted for forward compatibility; the default
    model charges only the newly processed tokens because prior context is
    served from cache.
    """
    if level.prefill_rate <= 0 or level.decode_rate <= 0:
        raise ConfigurationError("service_time: token rates must be > 0")
    base = turn.prefill_tokens / level.prefill_rate + turn.decode_tokens / level.decode_rate
    factor = config.interference(concurrent)
    if thrashing:
        factor *= config.thrash_latency_factor
    return base * factor


def admit(state: InstanceState, agent: AgentRuntimeState) -> None:
    """Move an agent into the ongoing set, counting its resumed context."""
    if agent.agent_id in state.ongoing:
        raise SimulationError(f"agent {agent.agent_id!r} already ongoing on instance {state.instance_id}")
    if state.pending and state.pending[0] is agent:
        state.pending.popleft()
    elif any(a.agent_id == agent.agent_id for a in state.pending):
        raise SimulationError(
            f"agent {agent.agent_id!r} admitted out of pending-queue order on instance {state.instance_id}"
        )
    state.ongoing[agent.agent_id] = agent
    state.context_usage += agent.context_tokens
    agent.instance_id = state.instance_id
    state.refresh_thrashing()


def complete_agent(state: InstanceState, agent_id: str) -> AgentRuntimeState:
    """Remove a finished agent, releasing its entire context at once."""
    agent = state.ongoing.pop(agent_id, None)
    if agent is None:
        raise SimulationError(f"agent {agent_id!r} not ongoing on instance {state.instance_id}")
    state.context_usage -= agent.context_tokens
    state.refresh_thrashing()
    return agent


def grow_context(agent: AgentRuntimeState, turn: TurnRecord, llm_time: float = 0.0) -> None:
    """Apply one completed turn: the context absorbs the turn's prefill and
    decode tokens, and the progress counters advance."""
    agent.context_tokens += turn.prefill_tokens + turn.decode_tokens
    agent.completed_steps += 1
    agent.decode_tokens_total += turn.decode_tokens
    agent.llm_time_total += llm_time
    if agent.context_tokens > agent.max_context_tokens:
        agent.max_context_tokens = agent.context_tokens


def power_draw(state: InstanceState, level: FrequencyLevel) -> float:
    """Instantaneous draw: active power while any request executes, else idle."""
    return level.active_power if state.busy else level.idle_power
