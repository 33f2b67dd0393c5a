"""Experiment configuration files.

An experiment is a YAML document with sections mirroring the module configs
plus optional sweep axes:

    workload:
      arrival_rate: 0.08
      arrival_process: poisson        # poisson | fixed_interval
      duration: 3600
      seed: 42
      turn_count:   {dist: lognormal, mean: 37.0, sigma: 2.03, min: 1, max: 2518}
      prefill_tokens: {dist: lognormal, mean: 400, sigma: 1.0, min: 1, max: 32768}
      decode_tokens:  {dist: lognormal, mean: 150, sigma: 1.0, min: 1, max: 8192}
      tool_time:    {dist: exponential, mean: 2.0}
      # or instead of the synthetic fields:
      # trace: path/to/trace.jsonl
    instance:
      count: 1
      capacity_tokens: 500000
      thrash_mode: recompute          # recompute | offload
      thrash_latency_factor: 3.0
      interference_coeff: 0.0
      frequency_table: default        # default | {calibration kwargs} | [explicit levels]
    controller:
      variant: context-aware          # off | fixed | context-aware
      alpha: 0.75
      beta: 0.95
      gamma: 0.90
      slo_target: 20.0
      epoch_length: 1.0
      boost: true
      thrash_avoidance: true
      fixed_level_mhz: 810            # required for variant: fixed
    router:
      policy: context-aware           # context-aware | round-robin | least-loaded
      consolidation_threshold: 0.5
      reassign_interval: 8
      imbalance_ratio: 2.0
      migration_delay: 0.0
    sim:
      duration: 3600
      record_interval: 1.0
    sweep:
      level_mhz: [1680, 1185, 900, 810, 660]
      arrival_rate: []
      slo_target: []
      policy: []
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import yaml

from .controller import ControllerConfig
from .engine import SimConfig
from .errors import ConfigurationError
from .instance import FrequencyLevel, FrequencyTable, InstanceConfig, default_frequency_table
from .router import RouterConfig
from .workload import Distribution, WorkloadSpec

SWEEP_AXES = ("level_mhz", "arrival_rate", "slo_target", "policy")


def _norm_enum(value: str) -> str:
    return value.replace("-", "_")


@dataclass
class ExperimentConfig:
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    trace_path: str | None = None
    instance_count: int = 1
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    sim_duration: float = 3600.0
    record_interval: float = 1.0
    seed: int | None = None
    sweep: dict[str, list] = field(default_factory=dict)

    def validate_collect(self) -> list[str]:
        """Check all invariants without running; returns diagnostics."""
        errors: list[str] = []
        checks = [
            lambda: self.workload.validate() if self.trace_path is None else None,
            lambda: self.instance.validate(),
            lambda: self.controller.validate(self.instance.frequency_table),
            lambda: self.router.validate(),
        ]
        for check in checks:
            try:
                check()
            except ConfigurationError as exc:
                errors.append(str(exc))
        if self.instance_count < 1:
            errors.append(f"instance.count: must be >= 1, got {self.instance_count}")
        if not self.sim_duration > 0:
            errors.append(f"sim.duration: must be > 0, got {self.sim_duration}")
        if not self.record_interval > 0:
            errors.append(f"sim.record_interval: must be > 0, got {self.record_interval}")
        for axis, values in self.sweep.items():
            if axis not in SWEEP_AXES:
                errors.append(f"sweep.{axis}: unknown axis (valid: {', '.join(SWEEP_AXES)})")
        return errors

    def to_sim_config(self) -> SimConfig:
        return SimConfig(
            workload=None if self.trace_path is not None else self.workload,
            trace_path=self.trace_path,
            instance_count=self.instance_count,
            instance=self.instance,
            controller=self.controller,
            router=self.router,
            sim_duration=self.sim_duration,
            record_interval=self.record_interval,
            seed=self.seed,
        )

    def resolved_dict(self) -> dict:
        from .engine import _config_echo

        return _config_echo(self.to_sim_config())


def _parse_distribution(data, name: str, default: Distribution) -> Distribution:
    if data is None:
        return default
    if not isinstance(data, dict):
        raise ConfigurationError(f"{name}: expected a mapping with dist/mean/sigma/min/max")
    known = {"dist", "mean", "sigma", "min", "max"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"{name}: unknown keys {sorted(unknown)}")
    maximum = data.get("max", default.maximum)
    if maximum is None:
        maximum = math.inf
    return Distribution(
        kind=data.get("dist", default.kind),
        mean=float(data.get("mean", default.mean)),
        sigma=float(data.get("sigma", default.sigma)),
        minimum=float(data.get("min", default.minimum)),
        maximum=float(maximum),
    )


def _parse_workload(data: dict) -> tuple[WorkloadSpec, str | None]:
    base = WorkloadSpec()
    if not data:
        return base, None
    trace_path = data.get("trace")
    spec = WorkloadSpec(
        arrival_rate=float(data.get("arrival_rate", base.arrival_rate)),
        arrival_process=_norm_enum(str(data.get("arrival_process", base.arrival_process))),
        duration=float(data.get("duration", base.duration)),
        seed=int(data.get("seed", base.seed)),
        turn_count=_parse_distribution(data.get("turn_count"), "workload.turn_count", base.turn_count),
        prefill_tokens=_parse_distribution(
            data.get("prefill_tokens"), "workload.prefill_tokens", base.prefill_tokens
        ),
        decode_tokens=_parse_distribution(
            data.get("decode_tokens"), "workload.decode_tokens", base.decode_tokens
        ),
        tool_time=_parse_distribution(data.get("tool_time"), "workload.tool_time", base.tool_time),
        prefill_growth_per_turn=float(
            data.get("prefill_growth_per_turn", base.prefill_growth_per_turn)
        ),
    )
    return spec, trace_path


def _parse_frequency_table(data) -> FrequencyTable:
    if data is None or data == "default":
        return default_frequency_table()
    if isinstance(data, dict):
        kwargs = dict(data)
        if "mhz" in kwargs:
            kwargs["mhz"] = tuple(float(m) for m in kwargs["mhz"])
        try:
            return default_frequency_table(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"instance.frequency_table: {exc}") from exc
    if isinstance(data, list):
        levels = []
        for i, entry in enumerate(data):
            if not isinstance(entry, dict):
                raise ConfigurationError(f"instance.frequency_table[{i}]: expected a mapping")
            try:
                levels.append(
                    FrequencyLevel(
                        nominal_mhz=float(entry["mhz"]),
                        prefill_rate=float(entry["prefill_rate"]),
                        decode_rate=float(entry["decode_rate"]),
                        active_power=float(entry["active_power"]),
                        idle_power=float(entry["idle_power"]),
                    )
                )
            except KeyError as exc:
                raise ConfigurationError(
                    f"instance.frequency_table[{i}]: missing key {exc.args[0]!r}"
                ) from exc
        return FrequencyTable(tuple(levels))
    raise ConfigurationError("instance.frequency_table: expected 'default', a mapping, or a list")


def _parse_instance(data: dict) -> tuple[InstanceConfig, int]:
    base = InstanceConfig()
    count = int(data.get("count", 1))
    config = InstanceConfig(
        capacity_tokens=int(data.get("capacity_tokens", base.capacity_tokens)),
        frequency_table=_parse_frequency_table(data.get("frequency_table")),
        thrash_mode=str(data.get("thrash_mode", base.thrash_mode)),
        thrash_latency_factor=float(data.get("thrash_latency_factor", base.thrash_latency_factor)),
        interference_coeff=float(data.get("interference_coeff", base.interference_coeff)),
    )
    return config, count


def _parse_controller(data: dict) -> ControllerConfig:
    base = ControllerConfig()
    fixed = data.get("fixed_level_mhz", base.fixed_level_mhz)
    return ControllerConfig(
        variant=_norm_enum(str(data.get("variant", base.variant))),
        alpha=float(data.get("alpha", base.alpha)),
        beta=float(data.get("beta", base.beta)),
        gamma=float(data.get("gamma", base.gamma)),
        slo_target=float(data.get("slo_target", base.slo_target)),
        epoch_length=float(data.get("epoch_length", base.epoch_length)),
        boost_enabled=bool(data.get("boost", base.boost_enabled)),
        thrash_avoidance=bool(data.get("thrash_avoidance", base.thrash_avoidance)),
        fixed_level_mhz=None if fixed is None else float(fixed),
        power_budget=data.get("power_budget"),
    )


def _parse_router(data: dict) -> RouterConfig:
    base = RouterConfig()
    return RouterConfig(
        policy=_norm_enum(str(data.get("policy", base.policy))),
        consolidation_threshold=float(
            data.get("consolidation_threshold", base.consolidation_threshold)
        ),
        reassign_interval=int(data.get("reassign_interval", base.reassign_interval)),
        imbalance_ratio=float(data.get("imbalance_ratio", base.imbalance_ratio)),
        migration_delay=float(data.get("migration_delay", base.migration_delay)),
        include_idle_instances=bool(
            data.get("include_idle_instances", base.include_idle_instances)
        ),
        reset_counter_only_on_reassign=bool(
            data.get("reset_counter_only_on_reassign", base.reset_counter_only_on_reassign)
        ),
    )


def from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("config: top level must be a mapping")
    known = {"workload", "instance", "controller", "router", "sim", "sweep"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"config: unknown sections {sorted(unknown)}")
    workload, trace_path = _parse_workload(data.get("workload") or {})
    instance, count = _parse_instance(data.get("instance") or {})
    sim = data.get("sim") or {}
    sweep_raw = data.get("sweep") or {}
    sweep: dict[str, list] = {}
    for axis, values in sweep_raw.items():
        if values is None:
            values = []
        if not isinstance(values, list):
            raise ConfigurationError(f"sweep.{axis}: expected a list")
        sweep[axis] = values
    return ExperimentConfig(
        workload=workload,
        trace_path=trace_path,
        instance_count=count,
        instance=instance,
        controller=_parse_controller(data.get("controller") or {}),
        router=_parse_router(data.get("router") or {}),
        sim_duration=float(sim.get("duration", 3600.0)),
        record_interval=float(sim.get("record_interval", 1.0)),
        seed=None if sim.get("seed") is None else int(sim.get("seed")),
        sweep=sweep,
    )


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
    return from_dict(data)


def apply_cell(config: ExperimentConfig, cell: dict) -> ExperimentConfig:
    """Return a copy of the experiment with one sweep cell's axis values applied."""
    out = replace(config, sweep={})
    if "level_mhz" in cell:
        out.controller = replace(
            out.controller, variant="fixed", fixed_level_mhz=float(cell["level_mhz"])
        )
    if "arrival_rate" in cell:
        out.workload = replace(out.workload, arrival_rate=float(cell["arrival_rate"]))
    if "slo_target" in cell:
        out.controller = replace(out.controller, slo_target=float(cell["slo_target"]))
    if "policy" in cell:
        out.router = replace(out.router, policy=_norm_enum(str(cell["policy"])))
    return out
