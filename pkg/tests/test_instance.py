"""Tests for the serving-instance model: service time, capacity accounting,
power draw, and the thrash flag."""

import numpy as np
import pytest

from agentsim import (
    AgentRuntimeState,
    ConfigurationError,
    FrequencyLevel,
    FrequencyTable,
    InstanceConfig,
    InstanceState,
    SimulationError,
    TurnRecord,
    admit,
    complete_agent,
    context_tokens_after,
    default_frequency_table,
    grow_context,
    power_draw,
    service_time,
)


def make_level(prefill=10000.0, decode=1000.0, active=300.0, idle=50.0, mhz=1000.0):
    return FrequencyLevel(mhz, prefill, decode, active, idle)


def make_state(capacity=100_000, instance_id=1, level=1):
    return InstanceState(instance_id=instance_id, capacity_tokens=capacity, current_level=level)


# -- service time ---------------------------------------------------------------


def test_service_time_direct_arithmetic():
    config = InstanceConfig()
    turn = TurnRecord(1000, 100, 0.0)
    t = service_time(turn, make_level(), 0, 1, False, config)
    assert t == pytest.approx(0.1 + 0.1, rel=1e-12)


def test_service_time_thrash_multiplier():
    config = InstanceConfig(thrash_latency_factor=3.0)
    turn = TurnRecord(1000, 100, 0.0)
    t = service_time(turn, make_level(), 0, 1, True, config)
    assert t == pytest.approx(0.6, rel=1e-12)


def test_service_time_positive_for_minimal_turn():
    config = InstanceConfig()
    for level in default_frequency_table().levels:
        assert service_time(TurnRecord(1, 1, 0.0), level, 0, 1, False, config) > 0.0


def test_service_time_monotone_in_level():
    config = InstanceConfig()
    table = config.frequency_table
    turn = TurnRecord(500, 200, 0.0)
    times = [
        service_time(turn, table.level(i), 0, 1, False, config)
        for i in range(1, table.num_levels + 1)
    ]
    assert all(a >= b for a, b in zip(times, times[1:]))
    assert times[0] > times[-1]


def test_service_time_interference_is_monotone():
    config = InstanceConfig(interference_coeff=0.1)
    turn = TurnRecord(1000, 100, 0.0)
    times = [service_time(turn, make_level(), 0, n, False, config) for n in range(1, 6)]
    assert times[0] == pytest.approx(0.2, rel=1e-12)
    assert all(b > a for a, b in zip(times, times[1:]))


def test_service_time_zero_rate_rejected():
    config = InstanceConfig()
    bad = make_level(prefill=0.0)
    with pytest.raises(ConfigurationError):
        service_time(TurnRecord(10, 10, 0.0), bad, 0, 1, False, config)


# -- admission / completion ------------------------------------------------------


def test_admit_fresh_agent_zero_context():
    state = make_state()
    agent = AgentRuntimeState("a")
    admit(state, agent)
    assert set(state.ongoing) == {"a"}
    assert state.context_usage == 0
    assert agent.instance_id == 1


def test_admit_adds_resumed_context():
    state = make_state()
    state.context_usage = 40_000
    agent = AgentRuntimeState("a", context_tokens=10_000)
    admit(state, agent)
    assert state.context_usage == 50_000


def test_admit_twice_is_an_error():
    state = make_state()
    agent = AgentRuntimeState("a")
    admit(state, agent)
    with pytest.raises(SimulationError):
        admit(state, agent)


def test_complete_releases_exact_context():
    state = make_state()
    a = AgentRuntimeState("a", context_tokens=30_000)
    b = AgentRuntimeState("b", context_tokens=20_000)
    admit(state, a)
    admit(state, b)
    assert state.context_usage == 50_000
    complete_agent(state, "a")
    assert state.context_usage == 20_000
    assert set(state.ongoing) == {"b"}


def test_complete_only_agent_clears_state():
    state = make_state()
    agent = AgentRuntimeState("a", context_tokens=5000)
    admit(state, agent)
    complete_agent(state, "a")
    assert state.context_usage == 0
    assert not state.thrashing


def test_complete_flips_thrash_flag():
    # usage 110k over capacity 100k; releasing a 30k agent drops below.
    state = make_state(capacity=100_000)
    a = AgentRuntimeState("a", context_tokens=30_000)
    b = AgentRuntimeState("b", context_tokens=80_000)
    admit(state, a)
    admit(state, b)
    assert state.context_usage == 110_000
    assert state.thrashing
    complete_agent(state, "a")
    assert state.context_usage == 80_000
    assert not state.thrashing


def test_complete_unknown_agent_is_an_error():
    state = make_state()
    with pytest.raises(SimulationError):
        complete_agent(state, "ghost")


# -- context growth ---------------------------------------------------------------


def test_grow_context_examples():
    agent = AgentRuntimeState("a")
    grow_context(agent, TurnRecord(100, 50, 0.0), llm_time=2.0)
    assert agent.context_tokens == 150
    assert agent.completed_steps == 1
    assert agent.decode_tokens_total == 50
    assert agent.llm_time_total == 2.0
    grow_context(agent, TurnRecord(25, 25, 0.0), llm_time=1.0)
    assert agent.context_tokens == 200
    assert agent.max_context_tokens == 200


def test_grow_context_matches_closed_form():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        turns = tuple(
            TurnRecord(int(rng.integers(1, 2000)), int(rng.integers(1, 500)), 0.0)
            for _ in range(n)
        )
        agent = AgentRuntimeState("a")
        for turn in turns:
            grow_context(agent, turn)
        assert agent.context_tokens == context_tokens_after(turns, n)


def test_usage_conservation_under_random_ops():
    # Replay a random admit/grow/complete sequence and recompute usage
    # independently from the ongoing set after every step.
    rng = np.random.default_rng(7)
    state = make_state(capacity=50_000)
    alive: dict[str, AgentRuntimeState] = {}
    next_id = 0
    for _ in range(500):
        action = rng.integers(0, 3)
        if action == 0 or not alive:
            agent = AgentRuntimeState(f"a{next_id}", context_tokens=int(rng.integers(0, 5000)))
            next_id += 1
            admit(state, agent)
            alive[agent.agent_id] = agent
        elif action == 1:
            agent = alive[list(alive)[int(rng.integers(0, len(alive)))]]
            before = state.context_usage
            turn = TurnRecord(int(rng.integers(1, 500)), int(rng.integers(1, 300)), 0.0)
            grow_context(agent, turn)
            state.context_usage = before + turn.prefill_tokens + turn.decode_tokens
            state.refresh_thrashing()
        else:
            agent_id = list(alive)[int(rng.integers(0, len(alive)))]
            del alive[agent_id]
            complete_agent(state, agent_id)
        assert state.context_usage == sum(a.context_tokens for a in state.ongoing.values())
        assert state.thrashing == (state.context_usage > state.capacity_tokens)


# -- power -------------------------------------------------------------------------


def test_power_idle_is_50w_with_default_table():
    table = default_frequency_table()
    state = make_state(level=1)
    for i in range(1, table.num_levels + 1):
        assert power_draw(state, table.level(i)) == 50.0


def test_power_busy_lowest_level_has_activation_jump():
    table = default_frequency_table()
    state = make_state(level=1)
    state.running_requests = 1
    assert power_draw(state, table.level(1)) >= 150.0


def test_power_busy_top_level_is_max_active():
    table = default_frequency_table()
    state = make_state(level=table.num_levels)
    state.running_requests = 2
    assert power_draw(state, table.level(table.num_levels)) == 400.0


def test_power_bounds_over_all_levels():
    table = default_frequency_table()
    state = make_state()
    for i in range(1, table.num_levels + 1):
        state.running_requests = 0
        idle = power_draw(state, table.level(i))
        state.running_requests = 3
        active = power_draw(state, table.level(i))
        assert 50.0 <= idle <= active <= 400.0


# -- table validation ---------------------------------------------------------------


def test_default_table_shape():
    table = default_frequency_table()
    table.validate()
    assert table.num_levels == 7
    mhz = [lvl.nominal_mhz for lvl in table.levels]
    assert mhz == sorted(mhz)
    assert mhz[0] == 660 and mhz[-1] == 1680
    assert table.index_of_mhz(810) == 2


def test_table_rejects_decreasing_power():
    good = default_frequency_table()
    levels = list(good.levels)
    levels[3] = FrequencyLevel(
        levels[3].nominal_mhz,
        levels[3].prefill_rate,
        levels[3].decode_rate,
        active_power=levels[2].active_power - 50,
        idle_power=levels[3].idle_power,
    )
    with pytest.raises(ConfigurationError, match="non-decreasing"):
        FrequencyTable(tuple(levels)).validate()


def test_table_rejects_small_activation_jump():
    lvl1 = FrequencyLevel(660, 100.0, 10.0, 120.0, 50.0)
    lvl2 = FrequencyLevel(1680, 200.0, 20.0, 400.0, 50.0)
    with pytest.raises(ConfigurationError, match="activation"):
        FrequencyTable((lvl1, lvl2)).validate()


def test_instance_config_validation():
    with pytest.raises(ConfigurationError, match="capacity_tokens"):
        InstanceConfig(capacity_tokens=0).validate()
    with pytest.raises(ConfigurationError, match="thrash_mode"):
        InstanceConfig(thrash_mode="panic").validate()
    with pytest.raises(ConfigurationError, match="thrash_latency_factor"):
        InstanceConfig(thrash_latency_factor=0.5).validate()
