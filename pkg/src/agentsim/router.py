"""Global multi-instance router: consolidation-first assignment plus
ratio-triggered reassignment.

New agents fill the lowest-numbered instance whose ongoing context usage is
below the consolidation threshold, keeping the remaining instances near
idle power; once every instance is above the threshold, assignment falls
back to the least-loaded instance.  A per-agent step counter allows a
reassignment check every ``reassign_interval`` turns: if the agent's current
instance carries at least ``imbalance_ratio`` times the context of the
least-loaded active instance, the agent migrates there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .errors import ConfigurationError, SimulationError
from .instance import AgentRuntimeState, InstanceState

ROUTER_POLICIES = ("context_aware", "round_robin", "least_loaded")


@dataclass(frozen=True)
class RouterConfig:
    policy: str = "context_aware"
    consolidation_threshold: float = 0.5  # fraction of capacity
    reassign_interval: int = 8  # conversation turns between checks
    imbalance_ratio: float = 2.0
    migration_delay: float = 0.0  # seconds added before a migrated agent's next turn
    # Reassignment candidates are instances with nonzero ongoing context, so a
    # consolidated system does not bounce agents onto deliberately idle
    # instances.  Set True to take the argmin over every registered instance.
    include_idle_instances: bool = False
    # The step counter resets after every executed check; set True to reset
    # only when a reassignment actually happens.
    reset_counter_only_on_reassign: bool = False

    def validate(self) -> None:
        if self.policy not in ROUTER_POLICIES:
            raise ConfigurationError(
                f"router.policy: must be one of {ROUTER_POLICIES}, got {self.policy!r}"
            )
        if not 0 < self.consolidation_threshold < 1:
            raise ConfigurationError(
                f"router.consolidation_threshold: must be in (0, 1), got {self.consolidation_threshold}"
            )
        if self.reassign_interval < 1:
            raise ConfigurationError(
                f"router.reassign_interval: must be >= 1, got {self.reassign_interval}"
            )
        if not self.imbalance_ratio > 1:
            raise ConfigurationError(
                f"router.imbalance_ratio: must be > 1, got {self.imbalance_ratio}"
            )
        if self.migration_delay < 0:
            raise ConfigurationError(
                f"router.migration_delay: must be >= 0, got {self.migration_delay}"
            )


@dataclass
class RouterState:
    """Placement bookkeeping shared across routing policies."""

    instance_ids: list[int]
    placement: dict[str, int] = field(default_factory=dict)
    round_robin_next: int = 0

    def validate(self) -> None:
        if not self.instance_ids:
            raise ConfigurationError("router: at least one instance must be registered")


def assign_agent(
    agent: AgentRuntimeState,
    usages: Mapping[int, float],
    capacity: float,
    config: RouterConfig,
    state: RouterState,
) -> int:
    """Place a newly arrived agent: lowest-ID instance under the
    consolidation threshold if any, otherwise the least-loaded instance."""
    state.validate()
    threshold = config.consolidation_threshold * capacity
    light = [i for i in state.instance_ids if usages[i] < threshold]
    if light:
        target = min(light)
    else:
        target = min(state.instance_ids, key=lambda i: (usages[i], i))
    state.placement[agent.agent_id] = target
    agent.instance_id = target
    agent.steps_since_assignment = 0
    return target


def maybe_reassign(
    agent: AgentRuntimeState,
    usages: Mapping[int, float],
    config: RouterConfig,
    state: RouterState,
) -> int | None:
    """Run the per-turn reassignment check for an agent issuing a request.

    Increments the agent's step counter first; once it reaches the interval,
    compares the agent's instance against the least-loaded candidate and
    returns the migration target (or None).  The counter resets after every
    executed check unless configured to reset only on actual reassignment.
    """
    agent.steps_since_assignment += 1
    if agent.steps_since_assignment < config.reassign_interval:
        return None
    current = agent.instance_id
    if config.include_idle_instances:
        candidates = state.instance_ids
    else:
        candidates = [i for i in state.instance_ids if usages[i] > 0 or i == current]
    target: int | None = None
    if candidates:
        best = min(candidates, key=lambda i: (usages[i], i))
        if best != current and usages[current] >= config.imbalance_ratio * usages[best]:
            target = best
    if target is not None:
        state.placement[agent.agent_id] = target
        agent.steps_since_assignment = 0
    elif not config.reset_counter_only_on_reassign:
        agent.steps_since_assignment = 0
    return target


def route_round_robin(agent: AgentRuntimeState, state: RouterState) -> int:
    """Cycle instance IDs in order of agent arrival."""
    state.validate()
    target = state.instance_ids[state.round_robin_next % len(state.instance_ids)]
    state.round_robin_next += 1
    state.placement[agent.agent_id] = target
    agent.instance_id = target
    agent.steps_since_assignment = 0
    return target


def route_least_loaded(
    agent: AgentRuntimeState, usages: Mapping[int, float], state: RouterState
) -> int:
    """Always pick the instance with minimum usage (ties to the lowest ID)."""
    state.validate()
    target = min(state.instance_ids, key=lambda i: (usages[i], i))
    state.placement[agent.agent_id] = target
    agent.instance_id = target
    agent.steps_since_assignment = 0
    return target


def migrate_context(
    agent: AgentRuntimeState, source: InstanceState, target: InstanceState
) -> None:
    """Move an agent between instances: its context leaves the source's usage
    and the agent joins the target's pending queue carrying the full context
    as resumed state, subject to the target's admission control."""
    if source.instance_id == target.instance_id:
        raise SimulationError(f"agent {agent.agent_id!r}: cannot migrate to the same instance")
    if agent.agent_id in source.ongoing:
        del source.ongoing[agent.agent_id]
        source.context_usage -= agent.context_tokens
        source.refresh_thrashing()
    else:
        for i, waiting in enumerate(source.pending):
            if waiting.agent_id == agent.agent_id:
                del source.pending[i]
                break
        else:
            raise SimulationError(
                f"agent {agent.agent_id!r} not placed on instance {source.instance_id}"
            )
    target.pending.append(agent)
    agent.instance_id = target.instance_id
