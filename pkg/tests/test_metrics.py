"""Tests for metrics: SLO attainment, percentiles, regime classification,
and report export with independent recomputation oracles."""

import csv
import math
import os

import pytest

from agentsim import (
    AgentMetrics,
    ConfigurationError,
    SimConfig,
    SimulationError,
    WorkloadSpec,
    export_report,
    percentile_throughput,
    regime_classify,
    run_simulation,
    slo_attainment,
)
from agentsim.metrics import AGENT_FIELDS, SUMMARY_FIELDS, format_value


def agents_from(throughputs, completed=True):
    return [
        AgentMetrics(
            agent_id=f"a{i}",
            throughput=tp,
            completed=completed,
            turn_count=1,
            max_context_tokens=100,
            total_llm_time=1.0,
            total_decode_tokens=int(tp) if tp else 0,
        )
        for i, tp in enumerate(throughputs)
    ]


# -- slo attainment ---------------------------------------------------------------


def test_slo_attainment_examples():
    assert slo_attainment(agents_from([25.0, 18.0, 30.0]), 20.0) == pytest.approx(2 / 3)
    assert slo_attainment(agents_from([25.0, 21.0, 40.0]), 20.0) == 1.0
    assert slo_attainment([], 20.0) is None
    assert slo_attainment(agents_from([25.0], completed=False), 20.0) is None


def test_slo_attainment_excludes_incomplete():
    agents = agents_from([25.0, 18.0]) + agents_from([1.0], completed=False)
    assert slo_attainment(agents, 20.0) == pytest.approx(0.5)


# -- percentile ---------------------------------------------------------------------


def test_percentile_nearest_rank():
    agents = agents_from([10.0, 20.0, 30.0, 40.0, 50.0])
    # rank = ceil(0.05 * 5) = 1 -> first order statistic
    assert percentile_throughput(agents, 0.05) == 10.0
    assert percentile_throughput(agents, 0.5) == 30.0
    assert percentile_throughput(agents, 0.99) == 50.0


def test_percentile_single_and_equal():
    assert percentile_throughput(agents_from([42.0]), 0.05) == 42.0
    assert percentile_throughput(agents_from([42.0]), 0.95) == 42.0
    assert percentile_throughput(agents_from([7.0] * 9), 0.3) == 7.0


def test_percentile_empty_and_bad_p():
    assert percentile_throughput([], 0.05) is None
    with pytest.raises(ConfigurationError):
        percentile_throughput(agents_from([1.0]), 0.0)
    with pytest.raises(ConfigurationError):
        percentile_throughput(agents_from([1.0]), 1.0)


def test_percentile_matches_sort_oracle():
    import numpy as np

    rng = np.random.default_rng(17)
    for _ in range(100):
        values = [float(v) for v in rng.uniform(1, 100, size=int(rng.integers(1, 50)))]
        agents = agents_from(values)
        p = float(rng.uniform(0.01, 0.99))
        expected = sorted(values)[math.ceil(p * len(values)) - 1]
        assert percentile_throughput(agents, p) == expected


# -- regime classification -------------------------------------------------------------


def test_regime_never_thrashing():
    segments, fraction = regime_classify({1: [(0.0, 0.0)]}, 10.0, 100.0)
    assert fraction == 0.0
    assert segments[1] == [(0.0, 100.0, False)]


def test_regime_half_window():
    segments, fraction = regime_classify({1: [(0.0, 5.0), (50.0, 20.0)]}, 10.0, 100.0)
    assert fraction == pytest.approx(0.5)
    assert segments[1] == [(0.0, 50.0, False), (50.0, 100.0, True)]


def test_regime_two_instances_weighted():
    series = {1: [(0.0, 20.0)], 2: [(0.0, 0.0)]}
    _segments, fraction = regime_classify(series, 10.0, 100.0)
    assert fraction == pytest.approx(0.5)


def test_regime_requires_coverage():
    with pytest.raises(SimulationError, match="window start"):
        regime_classify({1: [(5.0, 1.0)]}, 10.0, 100.0)


def test_regime_merges_adjacent_segments():
    series = {1: [(0.0, 1.0), (10.0, 2.0), (20.0, 50.0), (30.0, 60.0), (40.0, 3.0)]}
    segments, fraction = regime_classify(series, 10.0, 100.0)
    assert segments[1] == [(0.0, 20.0, False), (20.0, 40.0, True), (40.0, 100.0, False)]
    assert fraction == pytest.approx(0.2)


# -- formatting -------------------------------------------------------------------------


def test_format_six_significant_digits():
    assert format_value(123456.789) == "123457"
    assert format_value(0.000123456789) == "0.000123457"
    assert format_value(None) == "nan"
    assert format_value(True) == "1"
    assert format_value(7) == "7"
    assert format_value(1.0) == "1"


# -- export ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    config = SimConfig(
        workload=WorkloadSpec(arrival_rate=0.08, duration=400.0, seed=6),
        sim_duration=500.0,
    )
    result = run_simulation(config)
    outdir = tmp_path_factory.mktemp("report")
    export_report(result, str(outdir))
    return result, outdir


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_export_writes_all_files(exported):
    _result, outdir = exported
    for name in ("summary.csv", "agents.csv", "timeseries.csv", "decisions.csv", "config.yaml"):
        assert os.path.exists(os.path.join(outdir, name))


def test_summary_contains_exactly_system_metrics(exported):
    _result, outdir = exported
    rows = read_csv(os.path.join(outdir, "summary.csv"))
    assert len(rows) == 1
    assert tuple(rows[0].keys()) == SUMMARY_FIELDS


def test_agent_table_row_count(exported):
    result, outdir = exported
    rows = read_csv(os.path.join(outdir, "agents.csv"))
    assert len(rows) == result.arrived
    assert tuple(rows[0].keys()) == AGENT_FIELDS


def test_slo_recompute_from_exported_table(exported):
    # independent recomputation from the CSV matches the summary exactly
    result, outdir = exported
    agents = read_csv(os.path.join(outdir, "agents.csv"))
    summary = read_csv(os.path.join(outdir, "summary.csv"))[0]
    tau = 20.0
    done = [a for a in agents if a["completed"] == "1"]
    attained = sum(1 for a in done if float(a["throughput"]) >= tau)
    assert float(summary["slo_attainment"]) == attained / len(done)


def test_p5_recompute_from_exported_table(exported):
    result, outdir = exported
    agents = read_csv(os.path.join(outdir, "agents.csv"))
    summary = read_csv(os.path.join(outdir, "summary.csv"))[0]
    done = sorted(float(a["throughput"]) for a in agents if a["completed"] == "1")
    rank = math.ceil(0.05 * len(done))
    # nearest-rank percentile is an order statistic, so the rounded table
    # value equals the rounded summary value
    assert float(summary["p5_throughput"]) == done[rank - 1]
