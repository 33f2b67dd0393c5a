"""Agent traces, synthetic workload generation, and trace file I/O.

An agent is a multi-turn job: it arrives once and then alternates between
LLM turns (a prefill chunk plus a decode chunk) and tool execution gaps.
The generator draws agent arrivals from a Poisson or fixed-interval process
and per-agent turn structure from clamped scalar distributions.  The default
calibration produces a long-tailed mix of jobs: mean ~37 turns, clipped to
[1, 2518], so most agents finish quickly while a small fraction run for
hundreds or thousands of turns.

Trace files are UTF-8 JSON lines, one agent per line:

    {"agent_id": "a000001", "arrival_time": 12.5, "turns": [[400, 150, 2.0], ...]}

where each turn triple is ``[prefill_tokens, decode_tokens, tool_time]``.
Unknown fields are ignored on load and dropped on save.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TraceFormatError

DIST_KINDS = ("lognormal", "exponential", "constant")
ARRIVAL_PROCESSES = ("poisson", "fixed_interval", "replay")


@dataclass(frozen=True)
class Distribution:
    """Clamped scalar distribution for turn counts, token sizes, and tool time.

    ``mean`` is the mean of the unclamped distribution.  For the log-normal
    the underlying normal mean is derived as ``ln(mean) - sigma**2 / 2`` so
    that the unclamped sample mean equals ``mean``.
    """

    kind: str
    mean: float
    sigma: float = 1.0
    minimum: float = 0.0
    maximum: float = math.inf

    def validate(self, name: str) -> None:
        if self.kind not in DIST_KINDS:
            raise ConfigurationError(f"{name}.kind: unknown distribution {self.kind!r}")
        if not self.mean > 0:
            raise ConfigurationError(f"{name}.mean: must be > 0, got {self.mean}")
        if self.kind == "lognormal" and not self.sigma >= 0:
            raise ConfigurationError(f"{name}.sigma: must be >= 0, got {self.sigma}")
        if self.minimum > self.maximum:
            raise ConfigurationError(f"{name}.minimum: {self.minimum} exceeds maximum {self.maximum}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "lognormal":
            mu = math.log(self.mean) - 0.5 * self.sigma**2
            value = float(rng.lognormal(mu, self.sigma))
        elif self.kind == "exponential":
            value = float(rng.exponential(self.mean))
        else:
            value = self.mean
        return min(max(value, self.minimum), self.maximum)

    def sample_array(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "lognormal":
            mu = math.log(self.mean) - 0.5 * self.sigma**2
            values = rng.lognormal(mu, self.sigma, size=n)
        elif self.kind == "exponential":
            values = rng.exponential(self.mean, size=n)
        else:
            values = np.full(n, self.mean)
        return np.clip(values, self.minimum, self.maximum)

    def sample_count(self, rng: np.random.Generator) -> int:
        value = int(round(self.sample(rng)))
        return int(min(max(value, math.ceil(self.minimum)), math.floor(self.maximum)))


@dataclass(frozen=True)
class TurnRecord:
    """One LLM turn: new prefill tokens, generated decode tokens, and the
    tool-execution time between this turn's completion and the next issue.
    The final turn's tool_time is ignored by the engine."""

    prefill_tokens: int
    decode_tokens: int
    tool_time: float

    def __post_init__(self) -> None:
        if self.prefill_tokens < 1:
            raise ConfigurationError(f"prefill_tokens must be >= 1, got {self.prefill_tokens}")
        if self.decode_tokens < 1:
            raise ConfigurationError(f"decode_tokens must be >= 1, got {self.decode_tokens}")
        if self.tool_time < 0:
            raise ConfigurationError(f"tool_time must be >= 0, got {self.tool_time}")


@dataclass(frozen=True)
class AgentTrace:
    """Offline description of one agent: arrival time plus its ordered turns."""

    agent_id: str
    arrival_time: float
    turns: tuple[TurnRecord, ...]

    def __post_init__(self) -> None:
        if not self.agent_id:
            raise ConfigurationError("agent_id must be non-empty")
        if self.arrival_time < 0:
            raise ConfigurationError(f"arrival_time must be >= 0, got {self.arrival_time}")
        if len(self.turns) < 1:
            raise ConfigurationError(f"agent {self.agent_id!r} has no turns")


def context_tokens_after(turns: tuple[TurnRecord, ...], completed: int) -> int:
    """Resident context size after ``completed`` turns have finished."""
    return sum(t.prefill_tokens + t.decode_tokens for t in turns[:completed])


def prompt_context_at_turn(turns: tuple[TurnRecord, ...], index: int) -> int:
    """Context size while turn ``index`` (0-based) executes: all prior prefill
    and decode tokens plus the turn's own prefill."""
    return context_tokens_after(turns, index) + turns[index].prefill_tokens


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of a synthetic workload."""

    arrival_rate: float = 0.08
    arrival_process: str = "poisson"
    duration: float = 3600.0
    seed: int = 42
    turn_count: Distribution = field(
        default_factory=lambda: Distribution("lognormal", 37.0, 2.03, 1, 2518)
    )
    prefill_tokens: Distribution = field(
        default_factory=lambda: Distribution("lognormal", 400.0, 1.0, 1, 32768)
    )
    decode_tokens: Distribution = field(
        default_factory=lambda: Distribution("lognormal", 150.0, 1.0, 1, 8192)
    )
    tool_time: Distribution = field(
        default_factory=lambda: Distribution("exponential", 2.0, minimum=0.0)
    )
    # Additive tokens appended to the sampled prefill of turn i (0-based),
    # modelling observations that grow with conversation depth.
    prefill_growth_per_turn: float = 0.0

    def validate(self) -> None:
        if self.arrival_process not in ARRIVAL_PROCESSES:
            raise ConfigurationError(
                f"arrival_process: must be one of {ARRIVAL_PROCESSES}, got {self.arrival_process!r}"
            )
        if not self.arrival_rate > 0:
            raise ConfigurationError(f"arrival_rate: must be > 0, got {self.arrival_rate}")
        if not self.duration > 0:
            raise ConfigurationError(f"duration: must be > 0, got {self.duration}")
        if self.prefill_growth_per_turn < 0:
            raise ConfigurationError(
                f"prefill_growth_per_turn: must be >= 0, got {self.prefill_growth_per_turn}"
            )
        self.turn_count.validate("turn_count")
        self.prefill_tokens.validate("prefill_tokens")
        self.decode_tokens.validate("decode_tokens")
        self.tool_time.validate("tool_time")
        if self.turn_count.minimum < 1:
            raise ConfigurationError("turn_count.minimum: must be >= 1")


def _arrival_times(spec: WorkloadSpec, rng: np.random.Generator) -> list[float]:
    if spec.arrival_process == "fixed_interval":
        step = 1.0 / spec.arrival_rate
        count = math.ceil(spec.duration * spec.arrival_rate)
        return [i * step for i in range(count) if i * step < spec.duration]
    times: list[float] = []
    t = 0.0
    while True:
        t += float(rng.exponential(1.0 / spec.arrival_rate))
        if t >= spec.duration:
            break
        times.append(t)
    return times


def generate_workload(spec: WorkloadSpec) -> list[AgentTrace]:
    """Generate agents for ``spec``, sorted by arrival time.

    Pure function of the spec (including its seed).
    """
    spec.validate()
    if spec.arrival_process == "replay":
        raise ConfigurationError("arrival_process: 'replay' loads a trace file, it cannot be generated")
    rng = np.random.default_rng(spec.seed)
    arrivals = _arrival_times(spec, rng)
    prefill_max = math.floor(spec.prefill_tokens.maximum)
    agents: list[AgentTrace] = []
    for idx, arrival in enumerate(arrivals):
        n_turns = spec.turn_count.sample_count(rng)
        prefills = spec.prefill_tokens.sample_array(rng, n_turns)
        decodes = spec.decode_tokens.sample_array(rng, n_turns)
        tools = spec.tool_time.sample_array(rng, n_turns)
        turns = []
        for i in range(n_turns):
            prefill = int(round(prefills[i] + spec.prefill_growth_per_turn * i))
            prefill = min(max(prefill, 1), prefill_max)
            decode = max(int(round(decodes[i])), 1)
            turns.append(TurnRecord(prefill, decode, float(tools[i])))
        agents.append(AgentTrace(f"a{idx:06d}", arrival, tuple(turns)))
    return agents


def save_trace(agents: list[AgentTrace], path: str) -> None:
    """Write agents as JSON lines; round-trips exactly through load_trace."""
    seen: set[str] = set()
    for agent in agents:
        if agent.agent_id in seen:
            raise TraceFormatError(f"duplicate agent_id {agent.agent_id!r}")
        seen.add(agent.agent_id)
    with open(path, "w", encoding="utf-8") as fh:
        for agent in agents:
            record = {
                "agent_id": agent.agent_id,
                "arrival_time": agent.arrival_time,
                "turns": [[t.prefill_tokens, t.decode_tokens, t.tool_time] for t in agent.turns],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_trace(path: str) -> list[AgentTrace]:
    """Load a JSON-lines trace file, preserving agent order and all fields."""
    agents: list[AgentTrace] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise TraceFormatError(f"line {lineno}: expected an object")
            try:
                agent_id = record["agent_id"]
                arrival_time = record["arrival_time"]
                raw_turns = record["turns"]
            except KeyError as exc:
                raise TraceFormatError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
            if not isinstance(agent_id, str):
                raise TraceFormatError(f"line {lineno}: agent_id must be a string")
            if agent_id in seen:
                raise TraceFormatError(f"line {lineno}: duplicate agent_id {agent_id!r}")
            seen.add(agent_id)
            if not isinstance(raw_turns, list):
                raise TraceFormatError(f"line {lineno}: turns must be an array")
            turns = []
            for turn in raw_turns:
                if not isinstance(turn, list) or len(turn) != 3:
                    raise TraceFormatError(
                        f"line {lineno}: each turn must be a [prefill, decode, tool_time] triple"
                    )
                try:
                    turns.append(TurnRecord(int(turn[0]), int(turn[1]), float(turn[2])))
                except (TypeError, ValueError) as exc:
                    raise TraceFormatError(f"line {lineno}: {exc}") from exc
            try:
                agents.append(AgentTrace(agent_id, float(arrival_time), tuple(turns)))
            except (TypeError, ValueError) as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from exc
    return agents
