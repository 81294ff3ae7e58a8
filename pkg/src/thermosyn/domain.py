"""Catalog, network, and load data model with JSON ingestion.

Canonical units, fixed repo-wide: volume flow m³/h, heat flux and power kW,
pressure head m, temperature °C, time h, energy kWh.  Temperatures are
referenced to 0 °C so that heat flux can be written as c·V̇·T; every modeled
temperature is required to be ≥ 0 °C.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

KINDS = ("pump", "pipe", "heat_source", "temperature_source", "tank")
THERMAL_KINDS = ("heat_source", "temperature_source")
CONTROL_TYPES = ("single_stage", "multi_stage", "continuous")
MODES = ("quasi_stationary", "dynamic")


class InputError(ValueError):
    """Input document malformed or violating a model invariant.

    ``path`` names the offending location, e.g. ``components[2].heat_range``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.detail = message


def _num(obj: Any, path: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise InputError(path, f"expected a number, got {type(obj).__name__}")
    val = float(obj)
    if not math.isfinite(val):
        raise InputError(path, "must be finite")
    return val


def _str(obj: Any, path: str) -> str:
    if not isinstance(obj, str) or not obj:
        raise InputError(path, "expected a non-empty string")
    return obj


def _get(obj: Mapping, key: str, path: str) -> Any:
    if not isinstance(obj, Mapping):
        raise InputError(path, "expected an object")
    if key not in obj:
        raise InputError(f"{path}.{key}", "missing required field")
    return obj[key]


def _pair(obj: Any, path: str) -> Tuple[float, float]:
    if not isinstance(obj, Sequence) or isinstance(obj, str) or len(obj) != 2:
        raise InputError(path, "expected a [low, high] pair")
    return _num(obj[0], f"{path}[0]"), _num(obj[1], f"{path}[1]")


@dataclass(frozen=True)
class Control:
    """Control taxonomy of a component: single-stage, multi-stage, or continuous.

    ``levels`` holds the admissible level values for multi_stage controls.
    """

    type: str = "continuous"
    levels: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.type not in CONTROL_TYPES:
            raise InputError("control.type", f"unknown control type {self.type!r}")
        if self.type == "multi_stage":
            if not self.levels:
                raise InputError("control.levels", "multi_stage needs at least one level")
            if any(not (0.0 <= l <= 1.0) for l in self.levels):
                raise InputError("control.levels", "levels must lie in [0, 1]")
            if list(self.levels) != sorted(self.levels):
                raise InputError("control.levels", "levels must be sorted ascending")
        elif self.levels:
            raise InputError("control.levels", f"{self.type} control takes no levels")


@dataclass(frozen=True)
class PumpCurve:
    """Sampled characteristic of one pump speed: points (v m³/h, H m, P kW)."""

    speed: float
    points: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise InputError("pump_curves.points", "need at least 2 sample points")
        vs = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(vs, vs[1:])):
            raise InputError("pump_curves.points", "v samples must be strictly increasing")


@dataclass(frozen=True)
class ComponentSpec:
    """One purchasable catalog entry.

    Field applicability by kind:
      heat_range        heat_source only ([ΔQ̇_min, ΔQ̇_max] kW, may span negative
                        values for cooling)
      temp_range        temperature_source only ([T_min, T_max] °C)
      pump_curves       pump only, one sampled (v, H, P) curve per speed
      tank_capacity     tank only (m³)
      efficiency        heating/cooling kinds, in (0, 1]
      energy_source     heating/cooling kinds and pumps
      pressure_drop     fixed Δh of non-pumping kinds (m, must be ≤ 0)
    """

    id: str
    kind: str
    purchase_cost: float
    flow_capacity: float
    efficiency: Optional[float] = None
    energy_source: Optional[str] = None
    control: Control = field(default_factory=Control)
    heat_range: Optional[Tuple[float, float]] = None
    temp_range: Optional[Tuple[float, float]] = None
    pump_curves: Tuple[PumpCurve, ...] = ()
    pressure_drop: float = 0.0
    tank_capacity: Optional[float] = None

    def __post_init__(self):
        p = f"component {self.id!r}"
        if self.kind not in KINDS:
            raise InputError(f"{p}.kind", f"unknown kind {self.kind!r}")
        if self.purchase_cost < 0:
            raise InputError(f"{p}.purchase_cost", "must be ≥ 0")
        if self.flow_capacity <= 0:
            raise InputError(f"{p}.flow_capacity", "must be > 0")
        if (self.heat_range is not None) != (self.kind == "heat_source"):
            raise InputError(f"{p}.heat_range", "present iff kind is heat_source")
        if (self.temp_range is not None) != (self.kind == "temperature_source"):
            raise InputError(f"{p}.temp_range", "present iff kind is temperature_source")
        if bool(self.pump_curves) != (self.kind == "pump"):
            raise InputError(f"{p}.pump_curves", "present iff kind is pump")
        if (self.tank_capacity is not None) != (self.kind == "tank"):
            raise InputError(f"{p}.tank_capacity", "present iff kind is tank")
        if self.heat_range is not None and self.heat_range[0] > self.heat_range[1]:
            raise InputError(f"{p}.heat_range", "minimum exceeds maximum")
        if self.temp_range is not None:
            lo, hi = self.temp_range
            if lo > hi:
                raise InputError(f"{p}.temp_range", "minimum exceeds maximum")
            if lo < 0:
                raise InputError(f"{p}.temp_range", "temperatures must be ≥ 0 °C")
        if self.kind in THERMAL_KINDS:
            if self.efficiency is None:
                raise InputError(f"{p}.efficiency", f"required for {self.kind}")
            if not (0.0 < self.efficiency <= 1.0):
                raise InputError(f"{p}.efficiency", "must lie in (0, 1]")
            if self.energy_source is None:
                raise InputError(f"{p}.energy_source", f"required for {self.kind}")
        if self.kind == "pump" and self.energy_source is None:
            object.__setattr__(self, "energy_source", "electricity")
        if self.kind == "tank" and self.tank_capacity is not None and self.tank_capacity <= 0:
            raise InputError(f"{p}.tank_capacity", "must be > 0")
        if self.kind != "pump" and self.pressure_drop > 0:
            raise InputError(f"{p}.pressure_drop", "must be ≤ 0 (head never rises in a passive component)")
        if len({c.speed for c in self.pump_curves}) != len(self.pump_curves):
            raise InputError(f"{p}.pump_curves", "duplicate speed values")


@dataclass(frozen=True)
class Catalog:
    """Purchasable components plus the economic and fluid parameters.

    energy_prices maps energy-source name → currency per kWh;
    volumetric_heat_capacity is c in kWh/(m³·K); operational_lifespan in h.
    """

    components: Tuple[ComponentSpec, ...]
    energy_prices: Mapping[str, float]
    volumetric_heat_capacity: float
    operational_lifespan: float

    def __post_init__(self):
        if self.volumetric_heat_capacity <= 0:
            raise InputError("volumetric_heat_capacity", "must be > 0")
        if self.operational_lifespan <= 0:
            raise InputError("operational_lifespan", "must be > 0")
        for name, price in self.energy_prices.items():
            if price < 0:
                raise InputError(f"energy_prices.{name}", "must be ≥ 0")
        ids = [c.id for c in self.components]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[0]
            raise InputError("components", f"duplicate component id {dup!r}")

    def component(self, comp_id: str) -> ComponentSpec:
        for c in self.components:
            if c.id == comp_id:
                return c
        raise KeyError(comp_id)

    def price(self, energy_source: str) -> float:
        if energy_source not in self.energy_prices:
            raise InputError(f"energy_prices.{energy_source}", "energy source not priced")
        return self.energy_prices[energy_source]


@dataclass(frozen=True)
class Edge:
    """Directed network edge carrying one catalog component instance."""

    id: str
    tail: str
    head: str
    component: ComponentSpec


@dataclass(frozen=True)
class Network:
    """Directed multigraph construction kit with one source and one sink.

    The kit itself may contain directed cycles; acyclicity is a property of
    the purchased subgraph and is enforced by the optimization model.
    """

    vertices: Tuple[str, ...]
    source: str
    sink: str
    edges: Tuple[Edge, ...]

    def __post_init__(self):
        if self.source not in self.vertices:
            raise InputError("source", f"vertex {self.source!r} not declared")
        if self.sink not in self.vertices:
            raise InputError("sink", f"vertex {self.sink!r} not declared")
        if self.source == self.sink:
            raise InputError("sink", "source and sink must differ")
        if len(set(self.vertices)) != len(self.vertices):
            raise InputError("vertices", "duplicate vertex names")
        ids = [e.id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise InputError("edges", "duplicate edge ids")
        for e in self.edges:
            if e.tail not in self.vertices or e.head not in self.vertices:
                raise InputError(f"edges.{e.id}", "endpoint references unknown vertex")
            if e.head == self.source:
                raise InputError(f"edges.{e.id}", "edge into the source is not allowed")
            if e.tail == self.sink:
                raise InputError(f"edges.{e.id}", "edge out of the sink is not allowed")
            if e.tail == e.head:
                raise InputError(f"edges.{e.id}", "self-loop is not allowed")

    def in_edges(self, vertex: str) -> List[Edge]:
        return [e for e in self.edges if e.head == vertex]

    def out_edges(self, vertex: str) -> List[Edge]:
        return [e for e in self.edges if e.tail == vertex]

    def internal_vertices(self) -> List[str]:
        return [v for v in self.vertices if v not in (self.source, self.sink)]

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)

    def tanks(self) -> List[Edge]:
        return [e for e in self.edges if e.component.kind == "tank"]


@dataclass(frozen=True)
class Scenario:
    """One quasi-stationary load state holding for a fraction of the lifespan."""

    id: str
    fraction: float
    sink_demand: float
    sink_temp_window: Tuple[float, float]
    sink_min_head: float
    source_temp: float


@dataclass(frozen=True)
class Segment:
    """One constant-demand stretch of the dynamic profile."""

    duration: float
    sink_demand: float
    sink_temp_window: Tuple[float, float]
    sink_min_head: float
    source_temp: float


@dataclass(frozen=True)
class LoadSpec:
    """Demand description: scenario set (quasi mode) or ordered profile (dynamic)."""

    mode: str
    scenarios: Tuple[Scenario, ...] = ()
    profile: Tuple[Segment, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError("mode", f"unknown mode {self.mode!r}")


# ---------------------------------------------------------------------------
# JSON ingestion


def _parse_control(obj: Any, path: str) -> Control:
    if obj is None:
        return Control()
    if isinstance(obj, str):
        if obj == "multi_stage":
            raise InputError(path, "multi_stage control needs a levels list")
        return Control(type=obj)
    if isinstance(obj, Mapping):
        ctype = _str(_get(obj, "type", path), f"{path}.type")
        levels = obj.get("levels", [])
        if not isinstance(levels, Sequence) or isinstance(levels, str):
            raise InputError(f"{path}.levels", "expected a list of numbers")
        return Control(type=ctype, levels=tuple(_num(l, f"{path}.levels[{i}]") for i, l in enumerate(levels)))
    raise InputError(path, "expected a string or an object")


def _parse_component(obj: Any, path: str) -> ComponentSpec:
    cid = _str(_get(obj, "id", path), f"{path}.id")
    kind = _str(_get(obj, "kind", path), f"{path}.kind")
    curves: List[PumpCurve] = []
    for i, cv in enumerate(obj.get("pump_curves", [])):
        cp = f"{path}.pump_curves[{i}]"
        pts = _get(cv, "points", cp)
        if not isinstance(pts, Sequence) or len(pts) < 2:
            raise InputError(f"{cp}.points", "need at least 2 sample points")
        parsed = []
        for j, pt in enumerate(pts):
            if not isinstance(pt, Sequence) or len(pt) != 3:
                raise InputError(f"{cp}.points[{j}]", "expected [v, H, P]")
            parsed.append(tuple(_num(x, f"{cp}.points[{j}][{k}]") for k, x in enumerate(pt)))
        curves.append(PumpCurve(speed=_num(_get(cv, "speed", cp), f"{cp}.speed"), points=tuple(parsed)))
    heat_range = _pair(obj["heat_range"], f"{path}.heat_range") if "heat_range" in obj else None
    temp_range = _pair(obj["temp_range"], f"{path}.temp_range") if "temp_range" in obj else None
    return ComponentSpec(
        id=cid,
        kind=kind,
        purchase_cost=_num(_get(obj, "purchase_cost", path), f"{path}.purchase_cost"),
        flow_capacity=_num(_get(obj, "flow_capacity", path), f"{path}.flow_capacity"),
        efficiency=_num(obj["efficiency"], f"{path}.efficiency") if "efficiency" in obj else None,
        energy_source=_str(obj["energy_source"], f"{path}.energy_source") if "energy_source" in obj else None,
        control=_parse_control(obj.get("control"), f"{path}.control"),
        heat_range=heat_range,
        temp_range=temp_range,
        pump_curves=tuple(curves),
        pressure_drop=_num(obj.get("pressure_drop", 0.0), f"{path}.pressure_drop"),
        tank_capacity=_num(obj["tank_capacity"], f"{path}.tank_capacity") if "tank_capacity" in obj else None,
    )


def load_catalog(text: str) -> Catalog:
    """Parse a catalog JSON document, enforcing every type invariant."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError("$", f"invalid JSON: {exc}") from exc
    comps_obj = _get(obj, "components", "$")
    if not isinstance(comps_obj, Sequence):
        raise InputError("$.components", "expected a list")
    comps = tuple(_parse_component(c, f"components[{i}]") for i, c in enumerate(comps_obj))
    prices_obj = obj.get("energy_prices", {})
    if not isinstance(prices_obj, Mapping):
        raise InputError("$.energy_prices", "expected an object")
    prices = {k: _num(v, f"energy_prices.{k}") for k, v in prices_obj.items()}
    return Catalog(
        components=comps,
        energy_prices=prices,
        volumetric_heat_capacity=_num(_get(obj, "volumetric_heat_capacity", "$"), "$.volumetric_heat_capacity"),
        operational_lifespan=_num(_get(obj, "operational_lifespan", "$"), "$.operational_lifespan"),
    )


def build_network(catalog: Catalog, topology: Union[Mapping, Sequence]) -> Network:
    """Construct the network kit from edge descriptors.

    ``topology`` is either a mapping with keys edges / source / sink (and
    optionally vertices) or a bare list of edge descriptors, in which case the
    source and sink vertices default to the names "source" and "sink".
    Each descriptor is {id, tail, head, component}.
    """
    if isinstance(topology, Mapping):
        edges_obj = _get(topology, "edges", "$")
        source = _str(topology.get("source", "source"), "$.source")
        sink = _str(topology.get("sink", "sink"), "$.sink")
        declared = topology.get("vertices", [])
    else:
        edges_obj, source, sink, declared = topology, "source", "sink", []
    if not isinstance(edges_obj, Sequence):
        raise InputError("$.edges", "expected a list")
    vertices: List[str] = []
    for v in declared:
        name = _str(v, "$.vertices[]")
        if name not in vertices:
            vertices.append(name)
    edges: List[Edge] = []
    for i, ed in enumerate(edges_obj):
        path = f"edges[{i}]"
        comp_id = _str(_get(ed, "component", path), f"{path}.component")
        try:
            comp = catalog.component(comp_id)
        except KeyError:
            raise InputError(f"{path}.component", f"unknown component id {comp_id!r}") from None
        tail = _str(_get(ed, "tail", path), f"{path}.tail")
        head = _str(_get(ed, "head", path), f"{path}.head")
        eid = _str(ed.get("id", f"e{i}"), f"{path}.id")
        for v in (tail, head):
            if v not in vertices:
                vertices.append(v)
        edges.append(Edge(id=eid, tail=tail, head=head, component=comp))
    for v in (source, sink):
        if v not in vertices:
            vertices.append(v)
    return Network(vertices=tuple(vertices), source=source, sink=sink, edges=tuple(edges))


def load_topology(text: str) -> Mapping:
    """Parse a topology JSON document (shape validated later by build_network)."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError("$", f"invalid JSON: {exc}") from exc
    return obj


def _parse_boundary(obj: Mapping, path: str) -> Dict[str, Any]:
    window = _pair(_get(obj, "sink_temp_window", path), f"{path}.sink_temp_window")
    return dict(
        sink_demand=_num(_get(obj, "sink_demand", path), f"{path}.sink_demand"),
        sink_temp_window=window,
        sink_min_head=_num(obj.get("sink_min_head", 0.0), f"{path}.sink_min_head"),
        source_temp=_num(_get(obj, "source_temp", path), f"{path}.source_temp"),
    )


def load_loads(text: str) -> LoadSpec:
    """Parse a loads JSON document into a LoadSpec (quasi or dynamic)."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError("$", f"invalid JSON: {exc}") from exc
    mode = _str(_get(obj, "mode", "$"), "$.mode")
    if mode == "quasi_stationary":
        sc_obj = _get(obj, "scenarios", "$")
        scenarios = []
        for i, sc in enumerate(sc_obj):
            path = f"scenarios[{i}]"
            scenarios.append(
                Scenario(
                    id=_str(sc.get("id", f"s{i}"), f"{path}.id"),
                    fraction=_num(_get(sc, "fraction", path), f"{path}.fraction"),
                    **_parse_boundary(sc, path),
                )
            )
        return LoadSpec(mode=mode, scenarios=tuple(scenarios))
    if mode == "dynamic":
        seg_obj = _get(obj, "profile", "$")
        segments = []
        for i, seg in enumerate(seg_obj):
            path = f"profile[{i}]"
            segments.append(
                Segment(duration=_num(_get(seg, "duration", path), f"{path}.duration"), **_parse_boundary(seg, path))
            )
        return LoadSpec(mode=mode, profile=tuple(segments))
    raise InputError("$.mode", f"unknown mode {mode!r}")


def validate_load_spec(spec: LoadSpec, network: Network) -> List[str]:
    """Return diagnostics for the load spec against the network; empty iff clean."""
    diags: List[str] = []

    def check_boundary(label: str, demand, window, min_head, source_temp):
        if demand < 0:
            diags.append(f"{label}: sink_demand must be ≥ 0")
        lo, hi = window
        if lo > hi:
            diags.append(f"{label}: sink_temp_window low exceeds high")
        if lo < 0:
            diags.append(f"{label}: temperatures must be ≥ 0 °C")
        if min_head < 0:
            diags.append(f"{label}: sink_min_head must be ≥ 0")
        if source_temp < 0:
            diags.append(f"{label}: source_temp must be ≥ 0 °C")
        for v in (demand, lo, hi, min_head, source_temp):
            if not math.isfinite(v):
                diags.append(f"{label}: non-finite quantity")
                break

    if spec.mode == "quasi_stationary":
        if not spec.scenarios:
            diags.append("quasi_stationary mode needs at least one scenario")
        ids = [s.id for s in spec.scenarios]
        if len(set(ids)) != len(ids):
            diags.append("scenario ids must be unique")
        total = 0.0
        for s in spec.scenarios:
            if s.fraction < 0:
                diags.append(f"scenario {s.id}: fraction must be ≥ 0")
            total += s.fraction
            check_boundary(f"scenario {s.id}", s.sink_demand, s.sink_temp_window, s.sink_min_head, s.source_temp)
        if total > 1.0 + 1e-9:
            diags.append(f"scenario fractions exceed 1 (sum = {total:g})")
        if network.tanks():
            diags.append("tank edges are incompatible with quasi_stationary mode")
    else:
        if not spec.profile:
            diags.append("dynamic mode needs at least one profile segment")
        for i, seg in enumerate(spec.profile):
            if seg.duration <= 0:
                diags.append(f"profile[{i}]: duration must be > 0")
            check_boundary(f"profile[{i}]", seg.sink_demand, seg.sink_temp_window, seg.sink_min_head, seg.source_temp)
    return diags


# ---------------------------------------------------------------------------
# Serialization (round-trip support)


def control_to_obj(ctrl: Control) -> Any:
    if ctrl.type == "multi_stage":
        return {"type": ctrl.type, "levels": list(ctrl.levels)}
    return ctrl.type


def component_to_obj(comp: ComponentSpec) -> Dict[str, Any]:
    obj: Dict[str, Any] = {
        "id": comp.id,
        "kind": comp.kind,
        "purchase_cost": comp.purchase_cost,
        "flow_capacity": comp.flow_capacity,
        "control": control_to_obj(comp.control),
    }
    if comp.efficiency is not None:
        obj["efficiency"] = comp.efficiency
    if comp.energy_source is not None:
        obj["energy_source"] = comp.energy_source
    if comp.heat_range is not None:
        obj["heat_range"] = list(comp.heat_range)
    if comp.temp_range is not None:
        obj["temp_range"] = list(comp.temp_range)
    if comp.pump_curves:
        obj["pump_curves"] = [
            {"speed": c.speed, "points": [list(p) for p in c.points]} for c in comp.pump_curves
        ]
    if comp.pressure_drop != 0.0:
        obj["pressure_drop"] = comp.pressure_drop
    if comp.tank_capacity is not None:
        obj["tank_capacity"] = comp.tank_capacity
    return obj


def catalog_to_obj(catalog: Catalog) -> Dict[str, Any]:
    return {
        "components": [component_to_obj(c) for c in catalog.components],
        "energy_prices": dict(catalog.energy_prices),
        "volumetric_heat_capacity": catalog.volumetric_heat_capacity,
        "operational_lifespan": catalog.operational_lifespan,
    }


def network_to_obj(network: Network) -> Dict[str, Any]:
    return {
        "vertices": list(network.vertices),
        "source": network.source,
        "sink": network.sink,
        "edges": [{"id": e.id, "tail": e.tail, "head": e.head, "component": e.component.id} for e in network.edges],
    }


def loads_to_obj(spec: LoadSpec) -> Dict[str, Any]:
    if spec.mode == "quasi_stationary":
        return {
            "mode": spec.mode,
            "scenarios": [
                {
                    "id": s.id,
                    "fraction": s.fraction,
                    "sink_demand": s.sink_demand,
                    "sink_temp_window": list(s.sink_temp_window),
                    "sink_min_head": s.sink_min_head,
                    "source_temp": s.source_temp,
                }
                for s in spec.scenarios
            ],
        }
    return {
        "mode": spec.mode,
        "profile": [
            {
                "duration": g.duration,
                "sink_demand": g.sink_demand,
                "sink_temp_window": list(g.sink_temp_window),
                "sink_min_head": g.sink_min_head,
                "source_temp": g.source_temp,
            }
            for g in spec.profile
        ],
    }
