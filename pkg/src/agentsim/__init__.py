"""agentsim: discrete-event simulator for power-aware, stateful agentic LLM serving."""

from .controller import (
    ControllerConfig,
    ControllerDecision,
    admission_pass,
    control_epoch,
    running_throughput,
    select_frequency_level,
    slo_boost_check,
)
from .engine import (
    AgentResult,
    DecisionRow,
    SimConfig,
    SimulationResult,
    TimeseriesRow,
    integrate_power,
    run_simulation,
)
from .errors import ConfigurationError, SimulationError, TraceFormatError
from .instance import (
    AgentRuntimeState,
    FrequencyLevel,
    FrequencyTable,
    InstanceConfig,
    InstanceState,
    admit,
    complete_agent,
    default_frequency_table,
    grow_context,
    power_draw,
    service_time,
)
from .metrics import (
    AgentMetrics,
    SystemMetrics,
    export_report,
    percentile_throughput,
    regime_classify,
    slo_attainment,
)
from .router import (
    RouterConfig,
    RouterState,
    assign_agent,
    maybe_reassign,
    migrate_context,
    route_least_loaded,
    route_round_robin,
)
from .workload import (
    AgentTrace,
    Distribution,
    TurnRecord,
    WorkloadSpec,
    context_tokens_after,
    generate_workload,
    load_trace,
    prompt_context_at_turn,
    save_trace,
)

__version__ = "0.1.0"

__all__ = [
    "AgentMetrics",
    "AgentResult",
    "AgentRuntimeState",
    "AgentTrace",
    "ConfigurationError",
    "ControllerConfig",
    "ControllerDecision",
    "DecisionRow",
    "Distribution",
    "FrequencyLevel",
    "FrequencyTable",
    "InstanceConfig",
    "InstanceState",
    "RouterConfig",
    "RouterState",
    "SimConfig",
    "SimulationError",
    "SimulationResult",
    "SystemMetrics",
    "TimeseriesRow",
    "TraceFormatError",
    "TurnRecord",
    "WorkloadSpec",
    "admission_pass",
    "admit",
    "assign_agent",
    "complete_agent",
    "context_tokens_after",
    "control_epoch",
    "default_frequency_table",
    "export_report",
    "generate_workload",
    "grow_context",
    "integrate_power",
    "load_trace",
    "maybe_reassign",
    "migrate_context",
    "percentile_throughput",
    "power_draw",
    "prompt_context_at_turn",
    "regime_classify",
    "route_least_loaded",
    "route_round_robin",
    "run_simulation",
    "running_throughput",
    "save_trace",
    "select_frequency_level",
    "service_time",
    "slo_attainment",
    "slo_boost_check",
]
