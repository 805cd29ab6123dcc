"""Scenario configuration: the full network description for one run.

Scenarios are human-editable YAML with explicit units embedded in every
key name (length_m, dark_per_s, window_ns, ...).  Unknown keys are
rejected rather than ignored, since a silently dropped `length_km` is the
kind of misconfiguration that wastes an afternoon.

Two bundled, calibrated scenarios ship with the package: `allocation1`
(rate balancing) and `allocation2` (average-fidelity improvement); see
`qlansim/scenarios/`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .allocator import Objective, ScoreModel
from .coincidence import effective_window_s
from .errors import ValidationError
from .photonics import DetectorModel, FiberLink, SourceModel
from .qstate import werner_state
from .spectrum import Allocation, ChannelPlan, parse_link
from .timing import ClockModel

BUNDLED = ("allocation1", "allocation2")


class _Section:
    """Dict wrapper that pops known keys and rejects leftovers."""

    def __init__(self, data: dict | None, where: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ValidationError(f"{where} must be a mapping, got {type(data).__name__}")
        self.data = dict(data)
        self.where = where

    def take(self, key: str, default: Any = ...) -> Any:
        if key in self.data:
            return self.data.pop(key)
        if default is ...:
            raise ValidationError(f"{self.where}: missing required key {key!r}")
        return default

    def finish(self) -> None:
        if self.data:
            raise ValidationError(
                f"{self.where}: unknown keys {sorted(self.data)} "
                "(check unit suffixes against the documented schema)"
            )


@dataclass(frozen=True)
class NodeSetup:
    name: str
    detector: DetectorModel
    clock: ClockModel
    fiber: FiberLink
    misalignment_rad: float = 0.0

    def efficiency(self) -> float:
        return self.fiber.transmission() * self.detector.efficiency


@dataclass(frozen=True)
class MeasureConfig:
    start_epoch_s: int = 10
    integration_s: float = 60.0
    window_ns: float = 10.0
    arm_lead_s: float = 0.75
    offset_search_bins: int = 64

    def __post_init__(self) -> None:
        if self.integration_s <= 0:
            raise ValidationError("integration time must be positive")
        if self.offset_search_bins < 1:
            raise ValidationError("offset search range must be at least 1 bin")


@dataclass(frozen=True)
class TransportConfig:
    token: str = "qlan-demo-token"
    delay_s: float = 0.0
    jitter_s: float = 0.0
    drop_rate: float = 0.0
    node_delay_s: tuple[tuple[str, float], ...] = ()

    def delay_for(self, node: str) -> float:
        return self.delay_s + dict(self.node_delay_s).get(node, 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    plan: ChannelPlan
    source: SourceModel
    nodes: tuple[NodeSetup, ...]
    allocation: Allocation | None
    objective: Objective | None
    measure: MeasureConfig = MeasureConfig()
    transport: TransportConfig = TransportConfig()
    capacity_bps: float = 1e9
    subtracted_fidelity: bool = False

    def __post_init__(self) -> None:
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate node names in {names}")
        if len(names) < 2:
            raise ValidationError("a scenario needs at least two nodes")
        if (self.allocation is None) == (self.objective is None):
            raise ValidationError("exactly one of allocation/objective must be present")
        if self.source.pair_count != self.plan.pair_count:
            raise ValidationError(
                f"source has {self.source.pair_count} channels, "
                f"plan has {self.plan.pair_count}"
            )
        known = set(names)
        if self.allocation is not None:
            if self.allocation.pair_count != self.plan.pair_count:
                raise ValidationError("allocation pair count differs from the channel plan")
            for link in self.allocation.links():
                for node in link:
                    if node not in known:
                        raise ValidationError(f"allocation references unknown node {node!r}")
        if self.objective is not None:
            for link in self.objective.constraints:
                for node in link:
                    if node not in known:
                        raise ValidationError(f"objective references unknown node {node!r}")

    def node(self, name: str) -> NodeSetup:
        for n in self.nodes:
            if n.name == name:
                return n
        raise ValidationError(f"unknown node {name!r}")

    def node_names(self) -> list[str]:
        return sorted(n.name for n in self.nodes)

    def node_index(self, name: str) -> int:
        return self.node_names().index(name)

    def score_model(self) -> ScoreModel:
        return ScoreModel(
            source=self.source,
            node_efficiency={n.name: n.efficiency() for n in self.nodes},
            node_dark_per_s={n.name: n.detector.dark_count_rate for n in self.nodes},
            node_misalignment_rad={n.name: n.misalignment_rad for n in self.nodes},
            window_s=effective_window_s(self.measure.window_ns),
        )

    def with_overrides(
        self, seed: int | None = None, integration_s: float | None = None
    ) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if integration_s is not None:
            cfg = dataclasses.replace(
                cfg, measure=dataclasses.replace(cfg.measure, integration_s=float(integration_s))
            )
        return cfg


def _parse_detector(raw: dict | None, where: str) -> DetectorModel:
    s = _Section(raw, where)
    kind = s.take("kind", "SNSPD")
    base = DetectorModel.apd if kind == "APD" else DetectorModel.snspd
    det = base(
        efficiency=float(s.take("efficiency", 0.80 if kind == "SNSPD" else 0.20)),
        dark_count_rate=float(s.take("dark_per_s", 200.0 if kind == "SNSPD" else 3000.0)),
        jitter_sigma_ns=float(s.take("jitter_ns", 0.05 if kind == "SNSPD" else 0.35)),
        dead_time_ns=float(s.take("dead_ns", 50.0 if kind == "SNSPD" else 10_000.0)),
    )
    s.finish()
    return det


def _parse_clock(raw: dict | None, where: str) -> ClockModel:
    s = _Section(raw, where)
    clock = ClockModel(
        mean_offset_ns=float(s.take("mean_ns", 0.0)),
        jitter_sigma_ns=float(s.take("jitter_ns", 7.1)),
        drift_ns_per_s=float(s.take("drift_ns_per_s", 0.0)),
    )
    s.finish()
    return clock


def _parse_fiber(raw: dict | None, where: str) -> FiberLink:
    s = _Section(raw, where)
    fiber = FiberLink(
        length_m=float(s.take("length_m", 0.0)),
        attenuation_db_per_km=float(s.take("attenuation_db_per_km", 0.2)),
        extra_db=float(s.take("extra_db", 5.0)),
    )
    s.finish()
    return fiber


def _parse_source(raw: dict | None, pair_count: int) -> SourceModel:
    s = _Section(raw, "source")
    flux = s.take("flux_per_s")
    if len(flux) != pair_count:
        raise ValidationError(f"source.flux_per_s must list {pair_count} channels")
    werner_p = s.take("werner_p", [1.0] * pair_count)
    rotation = s.take("rotation_rad", [0.0] * pair_count)
    s.finish()
    if len(werner_p) != pair_count or len(rotation) != pair_count:
        raise ValidationError("source tables must cover every channel")
    states = tuple(werner_state(float(p), "psi+") for p in werner_p)
    return SourceModel(
        flux_per_s=tuple(float(f) for f in flux),
        states=states,
        rotation_rad=tuple(float(r) for r in rotation),
    )


def parse_scenario(raw: dict, default_name: str = "scenario") -> ScenarioConfig:
    top = _Section(raw, "scenario")
    name = str(top.take("name", default_name))
    seed = int(top.take("seed", 1))

    plan_s = _Section(top.take("channel_plan", {}), "channel_plan")
    plan = ChannelPlan(
        center_thz=float(plan_s.take("center_thz", 192.3125)),
        width_ghz=float(plan_s.take("width_ghz", 25.0)),
        pair_count=int(plan_s.take("pairs", 8)),
    )
    plan_s.finish()

    source = _parse_source(top.take("source"), plan.pair_count)

    nodes_raw = top.take("nodes")
    if not isinstance(nodes_raw, dict):
        raise ValidationError("nodes must be a mapping of node name to settings")
    nodes = []
    for node_name in nodes_raw:
        ns = _Section(nodes_raw[node_name], f"nodes.{node_name}")
        nodes.append(
            NodeSetup(
                name=str(node_name),
                detector=_parse_detector(ns.take("detector", {}), f"nodes.{node_name}.detector"),
                clock=_parse_clock(ns.take("clock", {}), f"nodes.{node_name}.clock"),
                fiber=_parse_fiber(ns.take("fiber", {}), f"nodes.{node_name}.fiber"),
                misalignment_rad=float(ns.take("misalignment_rad", 0.0)),
            )
        )
        ns.finish()

    allocation = None
    objective = None
    if "allocation" in top.data:
        alloc_raw = top.take("allocation")
        allocation = Allocation.from_dict(
            {str(k): list(v) for k, v in alloc_raw.items()}, plan.pair_count
        )
    if "objective" in top.data:
        obj_s = _Section(top.take("objective"), "objective")
        objective = Objective(
            kind=str(obj_s.take("kind")),
            constraints=tuple(parse_link(str(l)) for l in obj_s.take("require")),
            reserve=frozenset(int(c) for c in obj_s.take("reserve", [])),
            min_rate_per_s=float(obj_s.take("min_rate_per_s", 10.0)),
        )
        obj_s.finish()

    meas_s = _Section(top.take("measure", {}), "measure")
    measure = MeasureConfig(
        start_epoch_s=int(meas_s.take("start_epoch_s", 10)),
        integration_s=float(meas_s.take("integration_s", 60.0)),
        window_ns=float(meas_s.take("window_ns", 10.0)),
        arm_lead_s=float(meas_s.take("arm_lead_s", 0.75)),
        offset_search_bins=int(meas_s.take("offset_search_bins", 64)),
    )
    meas_s.finish()

    tr_s = _Section(top.take("transport", {}), "transport")
    node_delays = tr_s.take("node_delay_s", {})
    transport = TransportConfig(
        token=str(tr_s.take("token", "qlan-demo-token")),
        delay_s=float(tr_s.take("delay_s", 0.0)),
        jitter_s=float(tr_s.take("jitter_s", 0.0)),
        drop_rate=float(tr_s.take("drop_rate", 0.0)),
        node_delay_s=tuple(sorted((str(k), float(v)) for k, v in node_delays.items())),
    )
    tr_s.finish()

    budget_s = _Section(top.take("budget", {}), "budget")
    capacity = float(budget_s.take("capacity_bps", 1e9))
    budget_s.finish()

    report_s = _Section(top.take("report", {}), "report")
    subtracted = bool(report_s.take("subtracted_fidelity", False))
    report_s.finish()

    top.finish()
    return ScenarioConfig(
        name=name,
        seed=seed,
        plan=plan,
        source=source,
        nodes=tuple(nodes),
        allocation=allocation,
        objective=objective,
        measure=measure,
        transport=transport,
        capacity_bps=capacity,
        subtracted_fidelity=subtracted,
    )


def bundled_scenario_text(name: str) -> str:
    if name not in BUNDLED:
        raise ValidationError(f"no bundled scenario {name!r}; available: {BUNDLED}")
    return resources.files("qlansim.scenarios").joinpath(f"{name}.cfg").read_text()


def load_scenario(
    source: str | Path,
    seed: int | None = None,
    integration_s: float | None = None,
) -> ScenarioConfig:
    """Load a scenario from a file path or a bundled name."""
    if isinstance(source, str) and source in BUNDLED:
        text = bundled_scenario_text(source)
        default_name = source
    else:
        path = Path(source)
        if not path.exists():
            raise ValidationError(f"scenario file {path} does not exist")
        text = path.read_text()
        default_name = path.stem
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"scenario is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("scenario must be a YAML mapping")
    config = parse_scenario(raw, default_name)
    return config.with_overrides(seed=seed, integration_s=integration_s)
