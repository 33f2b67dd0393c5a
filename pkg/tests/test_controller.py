"""Tests for frequency selection, SLO boosting, and two-threshold admission."""

import math

import numpy as np
import pytest

from agentsim import (
    AgentRuntimeState,
    ConfigurationError,
    ControllerConfig,
    InstanceState,
    admission_pass,
    control_epoch,
    default_frequency_table,
    running_throughput,
    select_frequency_level,
    slo_boost_check,
)


def make_state(capacity=100_000, usage=0, level=7):
    state = InstanceState(instance_id=1, capacity_tokens=capacity, current_level=level)
    state.context_usage = usage
    state.refresh_thrashing()
    return state


def agent_with(throughput: float | None, agent_id="a", context=0) -> AgentRuntimeState:
    agent = AgentRuntimeState(agent_id, context_tokens=context)
    if throughput is not None:
        agent.decode_tokens_total = int(round(throughput * 10))
        agent.llm_time_total = 10.0
    return agent


# -- frequency selection ---------------------------------------------------------


def test_select_level_zero_usage():
    assert select_frequency_level(0, 100_000, 7, 0.75) == 1


def test_select_level_at_alpha_pins_top():
    assert select_frequency_level(75_000, 100_000, 7, 0.75) == 7


def test_select_level_midpoint():
    # usage/(alpha*cap) = 0.5 -> floor(0.5 * 6) + 1 = 4
    assert select_frequency_level(37_500, 100_000, 7, 0.75) == 4


def test_select_level_just_below_alpha():
    # 74999/75000 * 6 = 5.99992 -> floor + 1 = 6
    assert select_frequency_level(74_999, 100_000, 7, 0.75) == 6


def oracle_level(usage, capacity, num_levels, alpha):
    # independent re-evaluation of the two-case rule
    if usage >= alpha * capacity:
        return num_levels
    return math.floor(usage / (alpha * capacity) * (num_levels - 1)) + 1


def test_select_level_matches_oracle_and_is_monotone():
    capacity = 123_457
    for num_levels in (2, 3, 7, 11):
        for alpha in (0.5, 0.75, 1.0):
            previous = 1
            for usage in range(0, capacity + 1, 997):
                level = select_frequency_level(usage, capacity, num_levels, alpha)
                assert level == oracle_level(usage, capacity, num_levels, alpha)
                assert 1 <= level <= num_levels
                assert level >= previous
                previous = level


# -- running throughput / boost ----------------------------------------------------


def test_running_throughput_examples():
    agent = AgentRuntimeState("a", decode_tokens_total=300, llm_time_total=15.0)
    assert running_throughput(agent) == pytest.approx(20.0)
    assert running_throughput(AgentRuntimeState("b")) is None
    one = AgentRuntimeState("c", decode_tokens_total=50, llm_time_total=2.0)
    assert running_throughput(one) == pytest.approx(25.0)


def test_boost_check_examples():
    assert slo_boost_check([agent_with(25.0), agent_with(18.0), agent_with(30.0)], 20.0)
    assert not slo_boost_check([agent_with(25.0), agent_with(21.0)], 20.0)
    assert not slo_boost_check([], 20.0)
    assert not slo_boost_check([agent_with(None), agent_with(None)], 20.0)


def test_boost_check_mixed_data():
    # agents without completed steps are excluded from the minimum
    assert not slo_boost_check([agent_with(None), agent_with(30.0)], 20.0)
    assert slo_boost_check([agent_with(None), agent_with(5.0)], 20.0)


# -- admission ----------------------------------------------------------------------


def test_admission_admits_all_when_empty():
    state = make_state()
    for name in ("a", "b", "c"):
        state.pending.append(AgentRuntimeState(name))
    admitted, deferred = admission_pass(state, 0.95, 0.90, 100_000)
    assert admitted == ["a", "b", "c"]
    assert not deferred
    assert not state.pending


def test_admission_checks_threshold_before_each_admit():
    # 89k < 90k at loop entry, so the 5k agent is admitted; the loop then
    # exits at 94k, below the 95k hard cap.
    state = make_state(usage=89_000)
    state.pending.append(AgentRuntimeState("a", context_tokens=5_000))
    state.pending.append(AgentRuntimeState("b", context_tokens=1_000))
    admitted, deferred = admission_pass(state, 0.95, 0.90, 100_000)
    assert admitted == ["a"]
    assert state.context_usage == 94_000
    assert not deferred
    assert len(state.pending) == 1


def test_admission_defers_above_beta():
    state = make_state(usage=96_000)
    state.pending.append(AgentRuntimeState("a"))
    admitted, deferred = admission_pass(state, 0.95, 0.90, 100_000)
    assert admitted == []
    assert deferred
    assert len(state.pending) == 1


def test_admission_preserves_arrival_order():
    state = make_state()
    names = [f"a{i}" for i in range(10)]
    for name in names:
        state.pending.append(AgentRuntimeState(name, context_tokens=15_000))
    admitted, _ = admission_pass(state, 0.95, 0.90, 100_000)
    assert admitted == names[: len(admitted)]
    assert admitted and admitted == sorted(admitted, key=names.index)


def test_admission_safety_bound():
    # If usage <= gamma*cap before and every resumed context <= (beta-gamma)*cap,
    # usage stays <= beta*cap afterwards.
    rng = np.random.default_rng(3)
    for _ in range(200):
        capacity = 100_000
        beta, gamma = 0.95, 0.90
        state = make_state(usage=int(rng.integers(0, int(gamma * capacity))))
        for i in range(int(rng.integers(0, 8))):
            ctx = int(rng.integers(0, int((beta - gamma) * capacity)))
            state.pending.append(AgentRuntimeState(f"p{i}", context_tokens=ctx))
        admission_pass(state, beta, gamma, capacity)
        assert state.context_usage <= beta * capacity


# -- control epoch -----------------------------------------------------------------


def test_control_epoch_idle_instance():
    table = default_frequency_table()
    config = ControllerConfig(slo_target=20.0)
    state = make_state()
    decision = control_epoch(state, config, table)
    assert decision.frequency_level == 1
    assert decision.admitted == ()
    assert not decision.boosted
    assert not decision.deferred
    assert state.current_level == 1


def test_control_epoch_high_usage_pins_top():
    table = default_frequency_table()
    config = ControllerConfig()
    state = make_state(usage=80_000)
    state.ongoing["x"] = agent_with(100.0, "x", context=80_000)
    decision = control_epoch(state, config, table)
    assert decision.frequency_level == table.num_levels
    assert not decision.boosted


def test_control_epoch_boost_dominates_low_usage():
    table = default_frequency_table()
    config = ControllerConfig(slo_target=20.0)
    state = make_state(usage=20_000)
    state.ongoing["slow"] = agent_with(10.0, "slow", context=20_000)
    decision = control_epoch(state, config, table)
    assert decision.boosted
    assert decision.frequency_level == table.num_levels


def test_control_epoch_boost_disabled():
    table = default_frequency_table()
    config = ControllerConfig(slo_target=20.0, boost_enabled=False)
    state = make_state(usage=20_000)
    state.ongoing["slow"] = agent_with(10.0, "slow", context=20_000)
    decision = control_epoch(state, config, table)
    assert not decision.boosted
    assert decision.frequency_level < table.num_levels


def test_control_epoch_boost_dominance_property():
    rng = np.random.default_rng(12)
    table = default_frequency_table()
    config = ControllerConfig(slo_target=30.0)
    for _ in range(200):
        usage = int(rng.integers(0, 100_001))
        state = make_state(usage=usage)
        throughputs = rng.uniform(1.0, 100.0, size=int(rng.integers(0, 5)))
        for i, tp in enumerate(throughputs):
            state.ongoing[f"a{i}"] = agent_with(float(tp), f"a{i}")
        decision = control_epoch(state, config, table)
        if decision.boosted:
            assert decision.frequency_level == table.num_levels
        if decision.min_throughput is not None and decision.min_throughput < 30.0:
            assert decision.frequency_level == table.num_levels


def test_control_epoch_fixed_and_off_variants():
    table = default_frequency_table()
    state = make_state(usage=10_000)
    off = control_epoch(state, ControllerConfig(variant="off"), table)
    assert off.frequency_level == table.num_levels
    fixed = control_epoch(
        state, ControllerConfig(variant="fixed", fixed_level_mhz=810.0), table
    )
    assert fixed.frequency_level == 2


def test_baseline_admission_respects_physical_capacity():
    # Baselines have no gamma/beta thresholds, but the serving engine still
    # refuses new agents once resident context reaches the token capacity.
    table = default_frequency_table()
    state = make_state(capacity=100_000, usage=100_000)
    state.ongoing["big"] = agent_with(50.0, "big", context=100_000)
    state.pending.append(AgentRuntimeState("waiting"))
    decision = control_epoch(state, ControllerConfig(variant="off"), table)
    assert decision.admitted == ()
    assert len(state.pending) == 1


def test_controller_config_validation():
    with pytest.raises(ConfigurationError, match="gamma"):
        ControllerConfig(gamma=0.97, beta=0.95).validate()
    with pytest.raises(ConfigurationError, match="alpha"):
        ControllerConfig(alpha=1.5).validate()
    with pytest.raises(ConfigurationError, match="slo_target"):
        ControllerConfig(slo_target=0.0).validate()
    with pytest.raises(ConfigurationError, match="fixed_level_mhz"):
        ControllerConfig(variant="fixed").validate()
    with pytest.raises(ConfigurationError, match="no frequency level"):
        ControllerConfig(variant="fixed", fixed_level_mhz=777.0).validate(
            default_frequency_table()
        )
    # power budget is accepted but unused
    ControllerConfig(power_budget=1000.0).validate()
