"""Per-instance control loop: frequency selection, SLO boosting, admission.

Once per epoch the controller observes the instance's aggregate context
usage and picks a frequency level that rises linearly with usage across the
safe region ``[0, alpha * capacity)``; at or above ``alpha * capacity`` it
pins the top level.  A runtime safeguard overrides the context-aware choice
with the top level whenever any in-process agent's achieved throughput falls
below the SLO target.  Admission then moves pending agents into execution
while usage stays below ``gamma * capacity``, with a hard cap ``beta`` that
flags deferral of new arrivals.

Two baseline variants share the same loop: ``off`` pins the top level and
``fixed`` pins a configured level; both admit up to the physical token
capacity instead of the gamma/beta thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import ConfigurationError
from .instance import AgentRuntimeState, FrequencyTable, InstanceState, admit

CONTROLLER_VARIANTS = ("context_aware", "off", "fixed")


@dataclass(frozen=True)
class ControllerConfig:
    variant: str = "context_aware"
    alpha: float = 0.75  # context-pressure threshold for pinning the top level
    beta: float = 0.95  # admission hard cap (fraction of capacity)
    gamma: float = 0.90  # admission resume threshold, < beta
    slo_target: float = 20.0  # tokens/s per agent
    epoch_length: float = 1.0  # seconds between control decisions
    boost_enabled: bool = True
    thrash_avoidance: bool = True
    fixed_level_mhz: float | None = None  # required for variant "fixed"
    # Accepted for interface completeness; no control action uses it.
    power_budget: float | None = None

    def validate(self, table: FrequencyTable | None = None) -> None:
        if self.variant not in CONTROLLER_VARIANTS:
            raise ConfigurationError(
                f"controller.variant: must be one of {CONTROLLER_VARIANTS}, got {self.variant!r}"
            )
        if not 0 < self.alpha <= 1:
            raise ConfigurationError(f"controller.alpha: must be in (0, 1], got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ConfigurationError(f"controller.beta: must be in (0, 1), got {self.beta}")
        if not 0 < self.gamma < 1:
            raise ConfigurationError(f"controller.gamma: must be in (0, 1), got {self.gamma}")
        if not self.gamma < self.beta:
            raise ConfigurationError(
                f"controller.gamma: gamma ({self.gamma}) must be < beta ({self.beta})"
            )
        if not self.slo_target > 0:
            raise ConfigurationError(f"controller.slo_target: must be > 0, got {self.slo_target}")
        if not self.epoch_length > 0:
            raise ConfigurationError(f"controller.epoch_length: must be > 0, got {self.epoch_length}")
        if self.variant == "fixed":
            if self.fixed_level_mhz is None:
                raise ConfigurationError("controller.fixed_level_mhz: required for variant 'fixed'")
            if table is not None:
                table.index_of_mhz(self.fixed_level_mhz)


@dataclass(frozen=True)
class ControllerDecision:
    """Outcome of one control epoch on one instance."""

    frequency_level: int
    admitted: tuple[str, ...]
    deferred: bool
    boosted: bool
    usage_observed: int
    min_throughput: float | None


def select_frequency_level(usage: float, capacity: float, num_levels: int, alpha: float) -> int:
    """Map context usage to a frequency level: the top level at or above
    ``alpha * capacity``, otherwise a linear partition of the safe region."""
    if usage >= alpha * capacity:
        return num_levels
    return int(math.floor(usage / (alpha * capacity) * (num_levels - 1))) + 1


def running_throughput(agent: AgentRuntimeState) -> float | None:
    """Achieved tokens/s so far; None while the agent has no completed step."""
    if agent.llm_time_total <= 0.0:
        return None
    return agent.decode_tokens_total / agent.llm_time_total


def min_throughput(agents: Iterable[AgentRuntimeState]) -> float | None:
    """Minimum achieved throughput across agents with data, else None."""
    lowest: float | None = None
    for agent in agents:
        tp = running_throughput(agent)
        if tp is not None and (lowest is None or tp < lowest):
            lowest = tp
    return lowest


def slo_boost_check(agents: Iterable[AgentRuntimeState], tau: float) -> bool:
    """True when the slowest measured in-process agent is below the target."""
    lowest = min_throughput(agents)
    return lowest is not None and lowest < tau


def admission_pass(
    state: InstanceState,
    beta: float,
    gamma: float,
    capacity: float,
    on_admitted: Callable[[AgentRuntimeState], None] | None = None,
) -> tuple[list[str], bool]:
    """Admit pending agents in arrival order while usage stays below
    ``gamma * capacity``; report deferral when usage ends above
    ``beta * capacity``."""
    admitted: list[str] = []
    while state.pending and state.context_usage < gamma * capacity:
        agent = state.pending[0]
        admit(state, agent)
        admitted.append(agent.agent_id)
        if on_admitted is not None:
            on_admitted(agent)
    deferred = state.context_usage > beta * capacity
    return admitted, deferred


def control_epoch(
    state: InstanceState,
    config: ControllerConfig,
    table: FrequencyTable,
    on_level_applied: Callable[[int], None] | None = None,
    on_admitted: Callable[[AgentRuntimeState], None] | None = None,
) -> ControllerDecision:
    """Run one control epoch: observe, pick a level (with SLO boost), apply
    it, then admit.  The optional callbacks let the engine re-time in-flight
    work after the level change and start turns for admitted agents."""
    usage = state.context_usage
    in_process = list(state.ongoing.values()) + list(state.pending)
    observed_min = min_throughput(in_process)

    num_levels = table.num_levels
    if config.variant == "off":
        level = num_levels
    elif config.variant == "fixed":
        level = table.index_of_mhz(config.fixed_level_mhz)
    else:
        level = select_frequency_level(usage, state.capacity_tokens, num_levels, config.alpha)

    boosted = False
    if (
        config.variant == "context_aware"
        and config.boost_enabled
        and observed_min is not None
        and observed_min < config.slo_target
    ):
        level = num_levels
        boosted = True

    state.current_level = level
    if on_level_applied is not None:
        on_level_applied(level)

    if config.variant == "context_aware" and config.thrash_avoidance:
        gamma, beta = config.gamma, config.beta
    else:
        # Baselines admit without controller thresholds; the serving engine
        # still refuses new work once resident context fills the capacity.
        gamma, beta = 1.0, 1.0
    admitted, deferred = admission_pass(
        state, beta, gamma, state.capacity_tokens, on_admitted=on_admitted
    )

    return ControllerDecision(
        frequency_level=level,
        admitted=tuple(admitted),
        deferred=deferred,
        boosted=boosted,
        usage_observed=usage,
        min_throughput=observed_min,
    )
