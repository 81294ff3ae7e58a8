"""Mixed-integer model container and the synthesis assembly routines.

MilpModel is a plain in-memory IR: variables with bounds and integrality,
linear rows with sense and right-hand side, a linear objective plus constant,
and one family tag per row.  Assembly code in this module turns a catalog,
a network and a load specification into such a model; the solver module
consumes it unchanged.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

INF = float("inf")


class MilpModel:
    """Growable MILP: minimize c'x + const s.t. rows, bounds, integrality.

    Every row carries a short family tag (annotations maps row index to it),
    so tests can take a census of emitted constraint families.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: List[str] = []
        self.lb: List[float] = []
        self.ub: List[float] = []
        self.kinds: List[str] = []  # "continuous" | "binary" | "integer"
        self.obj: List[float] = []
        self.objective_constant: float = 0.0
        self.rows: List[List[Tuple[int, float]]] = []
        self.senses: List[str] = []  # "<=" | ">=" | "="
        self.rhs: List[float] = []
        self.tags: List[str] = []

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_constrs(self) -> int:
        return len(self.rows)

    @property
    def annotations(self) -> Dict[int, str]:
        return dict(enumerate(self.tags))

    def add_var(
        self,
        name: str,
        lb: float = 0.0,
        ub: float = INF,
        kind: str = "continuous",
        obj: float = 0.0,
    ) -> int:
        if kind not in ("continuous", "binary", "integer"):
            raise ValueError(f"bad variable kind: {kind}")
        if lb > ub:
            raise ValueError(f"variable {name}: lb {lb} > ub {ub}")
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.kinds.append(kind)
        self.obj.append(float(obj))
        return len(self.var_names) - 1

    def add_constr(
        self,
        coeffs: Sequence[Tuple[int, float]],
        sense: str,
        rhs: float,
        tag: str = "",
    ) -> int:
        if sense not in ("<=", ">=", "="):
            raise ValueError(f"bad sense: {sense}")
        merged: Dict[int, float] = {}
        for idx, co in coeffs:
            if not (0 <= idx < self.n_vars):
                raise IndexError(f"variable index {idx} out of range")
            merged[idx] = merged.get(idx, 0.0) + float(co)
        self.rows.append([(i, co) for i, co in merged.items() if co != 0.0])
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.tags.append(tag)
        return len(self.rows) - 1

    def set_objective_coef(self, idx: int, coef: float) -> None:
        self.obj[idx] = float(coef)

    def add_objective_coef(self, idx: int, coef: float) -> None:
        self.obj[idx] += float(coef)

    def var_bounds(self, idx: int) -> Tuple[float, float]:
        return self.lb[idx], self.ub[idx]

    def set_var_bounds(self, idx: int, lb: float, ub: float) -> None:
        if lb > ub:
            raise ValueError(f"lb {lb} > ub {ub}")
        self.lb[idx] = float(lb)
        self.ub[idx] = float(ub)

    def integer_indices(self) -> List[int]:
        return [i for i, k in enumerate(self.kinds) if k != "continuous"]

    def census(self) -> Dict[str, int]:
        """Row count per family tag, insertion-ordered by first appearance."""
        out: Dict[str, int] = {}
        for t in self.tags:
            out[t] = out.get(t, 0) + 1
        return out

    def row_activity(self, row: int, x: np.ndarray) -> float:
        return float(sum(co * x[i] for i, co in self.rows[row]))

    def objective_value(self, x: np.ndarray) -> float:
        return float(np.dot(np.asarray(self.obj), x) + self.objective_constant)


class VariableMap:
    """Role-keyed lookup of variable indices.

    Keys are (role, *coordinates) tuples, e.g. ("flow", scenario_id,
    edge_id) or ("head", scenario_id, vertex).  Registration order is
    preserved for deterministic decoding.
    """

    def __init__(self):
        self._by_key: Dict[Tuple, int] = {}

    def register(self, idx: int, role: str, *coords) -> int:
        key = (role,) + coords
        if key in self._by_key:
            raise KeyError(f"duplicate variable role key: {key}")
        self._by_key[key] = idx
        return idx

    def __call__(self, role: str, *coords) -> int:
        return self._by_key[(role,) + coords]

    def get(self, role: str, *coords) -> Optional[int]:
        return self._by_key.get((role,) + coords)

    def has(self, role: str, *coords) -> bool:
        return (role,) + coords in self._by_key

    def items(self) -> Iterable[Tuple[Tuple, int]]:
        return self._by_key.items()

    def by_role(self, role: str) -> List[Tuple[Tuple, int]]:
        return [(k[1:], v) for k, v in self._by_key.items() if k[0] == role]


@dataclass
class Options:
    """Assembly knobs shared by the quasi-stationary and dynamic builders."""

    grid_resolution: Tuple[int, int] = (4, 4)
    logarithmic: bool = True
    extra_interval_slots: int = 0
    head_max: Optional[float] = None
    temp_max: Optional[float] = None


# Branch-priority classes, lowest branched first: structural purchase and
# activation decisions shape the whole relaxation, stage selectors next,
# product-encoding selection bits last.
PRIORITY_PURCHASE = 0
PRIORITY_ACTIVATION = 1
PRIORITY_STAGE = 2
PRIORITY_EDGE_ENCODING = 3
PRIORITY_VERTEX_ENCODING = 4


@dataclass(frozen=True)
class ModelParams:
    """Envelope widths and big-M parameters shared by all constraint families.

    c is the volumetric heat capacity in kWh/(m³·K); every temperature
    variable lives in [0, t_max], every head in [0, h_max], every flow in
    [0, v_max], and q_max = c·v_max·t_max caps any single heat flux.
    """

    c: float
    v_max: float
    t_max: float
    h_max: float
    q_max: float


def derive_params(network, loads, catalog, options: Options) -> ModelParams:
    """Derive envelope widths from catalog bounds and load boundary data."""
    points = loads.scenarios if loads.mode == "quasi_stationary" else loads.profile
    temps = [0.0]
    for s in points:
        temps.append(s.sink_temp_window[1])
        temps.append(s.source_temp)
    for e in network.edges:
        if e.component.temp_range is not None:
            temps.append(e.component.temp_range[1])
    t_max = options.temp_max if options.temp_max is not None else max(temps)
    v_max = max((e.component.flow_capacity for e in network.edges), default=0.0)
    if options.head_max is not None:
        h_max = options.head_max
    else:
        lift = sum(
            max((pt[1] for c in e.component.pump_curves for pt in c.points), default=0.0)
            for e in network.edges
            if e.component.kind == "pump"
        )
        need = max((s.sink_min_head for s in points), default=0.0)
        h_max = max(lift, need) + 1.0
    c = catalog.volumetric_heat_capacity
    return ModelParams(c=c, v_max=v_max, t_max=t_max, h_max=h_max, q_max=c * v_max * t_max)


def _ensure_state(model: MilpModel) -> VariableMap:
    if not hasattr(model, "varmap"):
        model.varmap = VariableMap()
    if not hasattr(model, "branch_priority"):
        model.branch_priority = {}
    if not hasattr(model, "encodings"):
        model.encodings = []
    return model.varmap


def _options_of(model: MilpModel) -> Options:
    return getattr(model, "options", None) or Options()


def _edge_q_max(edge, params: ModelParams) -> float:
    return params.c * edge.component.flow_capacity * params.t_max


def _vertex_temp_bounds(network, scenario, vertex, params: ModelParams):
    """Temperature interval a boundary row pins this vertex into.

    The source temperature is fixed per scenario and the sink is confined to
    its delivery window; everywhere else the envelope [0, t_max] applies.
    """
    if vertex == network.source:
        t = scenario.source_temp
        return t, t
    if vertex == network.sink:
        lo, hi = scenario.sink_temp_window
        return max(0.0, lo), min(params.t_max, hi)
    return 0.0, params.t_max


def assemble_fluid(model: MilpModel, network, scenarios, params: ModelParams) -> None:
    """Purchase/activation coupling, head propagation, and flow conservation.

    Adds the purchase binaries, per-scenario activation binaries, flows,
    head gains and vertex heads, then the rows: activation needs purchase
    (Eq1), head ceiling (Eq2), the big-M pair collapsing head difference to
    the edge's head gain when active (Eq3/Eq4), flow capacity gating (Eq5),
    and flow conservation at internal vertices (Eq6).  Pump edges get their
    (flow, head gain, power, speed) point tied onto one of the sampled speed
    curves whenever active (pump_curve rows).
    """
    from .linearize import encode_union_on_model

    vm = _ensure_state(model)
    opts = _options_of(model)
    for e in network.edges:
        b = model.add_var(f"b[{e.id}]", 0.0, 1.0, kind="binary")
        vm.register(b, "purchase", e.id)
        model.branch_priority[b] = PRIORITY_PURCHASE
    for s in scenarios:
        for k in network.vertices:
            h = model.add_var(f"h[{s.id},{k}]", 0.0, params.h_max)
            vm.register(h, "head", s.id, k)
        for e in network.edges:
            comp = e.component
            a = model.add_var(f"a[{s.id},{e.id}]", 0.0, 1.0, kind="binary")
            vm.register(a, "activation", s.id, e.id)
            model.branch_priority[a] = PRIORITY_ACTIVATION
            v = model.add_var(f"v[{s.id},{e.id}]", 0.0, comp.flow_capacity)
            vm.register(v, "flow", s.id, e.id)
            if comp.kind == "pump":
                if not comp.pump_curves:
                    raise ValueError(f"pump edge {e.id} has no curve data")
                heads = [pt[1] for cv in comp.pump_curves for pt in cv.points]
                powers = [pt[2] for cv in comp.pump_curves for pt in cv.points]
                dh = model.add_var(
                    f"dh[{s.id},{e.id}]", min(0.0, min(heads)), max(0.0, max(heads))
                )
                n = model.add_var(
                    f"n[{s.id},{e.id}]", 0.0, max(cv.speed for cv in comp.pump_curves)
                )
                p = model.add_var(
                    f"p[{s.id},{e.id}]", min(0.0, min(powers)), max(0.0, max(powers))
                )
                vm.register(n, "pump_speed", s.id, e.id)
                vm.register(p, "pump_power", s.id, e.id)
            else:
                drop = comp.pressure_drop
                dh = model.add_var(f"dh[{s.id},{e.id}]", drop, drop)
            vm.register(dh, "head_gain", s.id, e.id)
    for s in scenarios:
        for e in network.edges:
            a = vm("activation", s.id, e.id)
            v = vm("flow", s.id, e.id)
            dh = vm("head_gain", s.id, e.id)
            model.add_constr([(a, 1.0), (vm("purchase", e.id), -1.0)], "<=", 0.0, tag="Eq1")
            model.add_constr([(v, 1.0), (a, -e.component.flow_capacity)], "<=", 0.0, tag="Eq5")
            hh = vm("head", s.id, e.head)
            ht = vm("head", s.id, e.tail)
            dlo, dhi = model.var_bounds(dh)
            m_up = params.h_max - min(dlo, 0.0)
            m_dn = params.h_max + max(dhi, 0.0)
            model.add_constr(
                [(hh, 1.0), (ht, -1.0), (dh, -1.0), (a, m_up)], "<=", m_up, tag="Eq3"
            )
            model.add_constr(
                [(hh, 1.0), (ht, -1.0), (dh, -1.0), (a, -m_dn)], ">=", -m_dn, tag="Eq4"
            )
        for k in network.vertices:
            model.add_constr([(vm("head", s.id, k), 1.0)], "<=", params.h_max, tag="Eq2")
        for k in network.internal_vertices():
            coeffs = [(vm("flow", s.id, e.id), 1.0) for e in network.in_edges(k)]
            coeffs += [(vm("flow", s.id, e.id), -1.0) for e in network.out_edges(k)]
            model.add_constr(coeffs, "=", 0.0, tag="Eq6")
        for e in network.edges:
            comp = e.component
            if comp.kind != "pump":
                continue
            pts: List[Tuple[float, float, float, float]] = []
            segs: List[Tuple[int, int]] = []
            for cv in comp.pump_curves:
                base = len(pts)
                pts.extend((pv, ph, pp, cv.speed) for pv, ph, pp in cv.points)
                segs.extend((base + i, base + i + 1) for i in range(len(cv.points) - 1))
            enc = encode_union_on_model(
                model,
                np.asarray(pts),
                segs,
                (
                    vm("flow", s.id, e.id),
                    vm("head_gain", s.id, e.id),
                    vm("pump_power", s.id, e.id),
                    vm("pump_speed", s.id, e.id),
                ),
                vm("activation", s.id, e.id),
                logarithmic=opts.logarithmic,
                name=f"pump[{s.id},{e.id}]",
                tag="pump_curve",
            )
            for y in enc.binary_vars:
                model.branch_priority[y] = PRIORITY_EDGE_ENCODING
            model.encodings.append(("pump", s.id, e.id, enc))


def assemble_heat(model: MilpModel, network, scenarios, params: ModelParams, grids) -> None:
    """Heat fluxes, temperatures, and their product couplings.

    Requires assemble_fluid to have run on the same model.  Adds per-edge
    inlet/outlet heat fluxes and inlet temperature, per-vertex temperature,
    and per-inflow-vertex mixing aggregates.  Rows: heat gated by activation
    (Eq11/Eq12, plus an outlet cap c·t_max·v̇ on heat sources closing the
    zero-flow injection hole), heat conservation (Eq13), the pass-through
    pair q̇_out = q̇_in + Δq̇ on every non-temperature-source edge
    (Eq14/Eq15), the vertex mixing product ΣQ̇ = c·(ΣV̇)·t over the vertex
    grid (Eq16), the edge inlet product q̇_in = c·v̇·θ_in over the edge grid
    (Eq8), and the inlet-temperature big-M pair tying θ_in to the tail
    temperature when active (Eq17/Eq18).  Where a boundary row pins a vertex
    temperature (source value, sink window), envelope rows bound the encoded
    heat against c·v̇·t within the grid error, so the continuous relaxation
    pays for real temperature lifts instead of drifting off the product
    surface.
    """
    from .linearize import encode_bilinear_on_model, error_bound

    vm = _ensure_state(model)
    opts = _options_of(model)
    c = params.c
    for s in scenarios:
        for k in network.vertices:
            t = model.add_var(f"t[{s.id},{k}]", 0.0, params.t_max)
            vm.register(t, "temp", s.id, k)
        for e in network.edges:
            qm = _edge_q_max(e, params)
            qin = model.add_var(f"qin[{s.id},{e.id}]", 0.0, qm)
            qout = model.add_var(f"qout[{s.id},{e.id}]", 0.0, qm)
            tin = model.add_var(f"tin[{s.id},{e.id}]", 0.0, params.t_max)
            vm.register(qin, "heat_in", s.id, e.id)
            vm.register(qout, "heat_out", s.id, e.id)
            vm.register(tin, "inlet_temp", s.id, e.id)
            if e.component.kind == "heat_source":
                lo, hi = e.component.heat_range
                d = model.add_var(f"dq[{s.id},{e.id}]", min(0.0, lo), max(0.0, hi))
                vm.register(d, "delta_heat", s.id, e.id)
        for k in network.vertices:
            in_caps = sum(e.component.flow_capacity for e in network.in_edges(k))
            if not network.in_edges(k):
                continue
            vin = model.add_var(f"vin[{s.id},{k}]", 0.0, in_caps)
            w = model.add_var(f"w[{s.id},{k}]", 0.0, c * in_caps * params.t_max)
            vm.register(vin, "mix_flow", s.id, k)
            vm.register(w, "mix_heat", s.id, k)
    for s in scenarios:
        for e in network.edges:
            a = vm("activation", s.id, e.id)
            v = vm("flow", s.id, e.id)
            qin = vm("heat_in", s.id, e.id)
            qout = vm("heat_out", s.id, e.id)
            tin = vm("inlet_temp", s.id, e.id)
            qm = _edge_q_max(e, params)
            model.add_constr([(qin, 1.0), (a, -qm)], "<=", 0.0, tag="Eq11")
            model.add_constr([(qout, 1.0), (a, -qm)], "<=", 0.0, tag="Eq12")
            kind = e.component.kind
            if kind == "heat_source":
                # without this cap a zero-flow edge could still inject heat
                model.add_constr([(qout, 1.0), (v, -c * params.t_max)], "<=", 0.0, tag="Eq12")
            if kind != "temperature_source":
                extra = []
                if kind == "heat_source":
                    extra = [(vm("delta_heat", s.id, e.id), -1.0)]
                # Eq11/Eq12 zero both fluxes on an inactive edge and l <= a
                # zeroes the charged delta, so the pass-through pair holds at
                # both integer points with no activation slack; keeping it
                # tight stops the relaxation from routing free heat through
                # half-active edges
                model.add_constr(
                    [(qout, 1.0), (qin, -1.0)] + extra, "<=", 0.0, tag="Eq14"
                )
                model.add_constr(
                    [(qout, 1.0), (qin, -1.0)] + extra, ">=", 0.0, tag="Eq15"
                )
            enc = encode_bilinear_on_model(
                model,
                grids[("edge", e.id)],
                v,
                tin,
                qin,
                a,
                logarithmic=opts.logarithmic,
                name=f"qin[{s.id},{e.id}]",
                tag="Eq8",
            )
            if enc is not None:
                for y in enc.binary_vars:
                    model.branch_priority[y] = PRIORITY_EDGE_ENCODING
                model.encodings.append(("edge", s.id, e.id, enc))
            tt = vm("temp", s.id, e.tail)
            tm = params.t_max
            model.add_constr([(tin, 1.0), (tt, -1.0), (a, tm)], "<=", tm, tag="Eq17")
            model.add_constr([(tin, 1.0), (tt, -1.0), (a, -tm)], ">=", -tm, tag="Eq18")
            # envelope pinch: when the tail temperature is pinned by a
            # boundary row, q_in = c*v*t_tail holds up to the grid error, so
            # the fractional hull cannot inflate or hide inlet heat
            t_lo, t_hi = _vertex_temp_bounds(network, s, e.tail, params)
            err = error_bound(grids[("edge", e.id)])
            if t_hi < params.t_max:
                model.add_constr(
                    [(qin, 1.0), (v, -c * t_hi)], "<=", err, tag="envelope"
                )
            if t_lo > 0.0:
                model.add_constr(
                    [(qin, 1.0), (v, -c * t_lo)], ">=", -err, tag="envelope"
                )
        for k in network.internal_vertices():
            coeffs = [(vm("heat_out", s.id, e.id), 1.0) for e in network.in_edges(k)]
            coeffs += [(vm("heat_in", s.id, e.id), -1.0) for e in network.out_edges(k)]
            model.add_constr(coeffs, "=", 0.0, tag="Eq13")
        for k in network.vertices:
            if not network.in_edges(k):
                continue
            vin = vm("mix_flow", s.id, k)
            w = vm("mix_heat", s.id, k)
            model.add_constr(
                [(vin, 1.0)] + [(vm("flow", s.id, e.id), -1.0) for e in network.in_edges(k)],
                "=",
                0.0,
                tag="Eq16",
            )
            model.add_constr(
                [(w, 1.0)] + [(vm("heat_out", s.id, e.id), -1.0) for e in network.in_edges(k)],
                "=",
                0.0,
                tag="Eq16",
            )
            enc = encode_bilinear_on_model(
                model,
                grids[("vertex", k)],
                vin,
                vm("temp", s.id, k),
                w,
                None,
                logarithmic=opts.logarithmic,
                name=f"mix[{s.id},{k}]",
                tag="Eq16",
            )
            if enc is not None:
                for y in enc.binary_vars:
                    model.branch_priority[y] = PRIORITY_VERTEX_ENCODING
                model.encodings.append(("vertex", s.id, k, enc))
            # envelope pinch on the mixed heat, same reasoning as the edge
            # inlet rows: a pinned vertex temperature bounds W = c*Vin*t
            # within the grid error even while the selection is fractional
            t_lo, t_hi = _vertex_temp_bounds(network, s, k, params)
            err = error_bound(grids[("vertex", k)])
            if t_hi < params.t_max:
                model.add_constr(
                    [(w, 1.0), (vin, -c * t_hi)], "<=", err, tag="envelope"
                )
            if t_lo > 0.0:
                model.add_constr(
                    [(w, 1.0), (vin, -c * t_lo)], ">=", -err, tag="envelope"
                )


def _add_level(model: MilpModel, vm: VariableMap, s, e, a: int) -> int:
    """Level variable restricted by the component's control taxonomy (Eq21)."""
    ctrl = e.component.control
    if ctrl.type == "single_stage":
        l = model.add_var(f"l[{s.id},{e.id}]", 0.0, 1.0, kind="binary")
        model.branch_priority[l] = PRIORITY_STAGE
        model.add_constr([(l, 1.0), (a, -1.0)], "<=", 0.0, tag="Eq21")
    elif ctrl.type == "multi_stage":
        l = model.add_var(f"l[{s.id},{e.id}]", 0.0, 1.0)
        sigmas = []
        for m_i, val in enumerate(ctrl.levels):
            sg = model.add_var(f"sg[{s.id},{e.id},{m_i}]", 0.0, 1.0, kind="binary")
            vm.register(sg, "stage", s.id, e.id, m_i)
            model.branch_priority[sg] = PRIORITY_STAGE
            sigmas.append((sg, val))
        model.add_constr(
            [(sg, 1.0) for sg, _ in sigmas] + [(a, -1.0)], "=", 0.0, tag="Eq21"
        )
        model.add_constr(
            [(l, 1.0)] + [(sg, -val) for sg, val in sigmas], "=", 0.0, tag="Eq21"
        )
    else:
        l = model.add_var(f"l[{s.id},{e.id}]", 0.0, 1.0)
        model.add_constr([(l, 1.0), (a, -1.0)], "<=", 0.0, tag="Eq21")
    vm.register(l, "level", s.id, e.id)
    return l


def assemble_thermal_components(model: MilpModel, network, scenarios) -> None:
    """Level control and source-specific couplings for thermal edges.

    Expects the model to carry varmap, params, options, and grids attributes
    (assemble_quasi_stationary attaches them).  Heat sources get their heat
    delta tied to the level (Eq22).  Temperature sources get a set-point
    variable tied to the level (Eq23), big-M pairs pinning both the head
    vertex temperature and the edge outlet temperature to the set-point when
    active (Eq19/Eq20), an outlet product encoding q̇_out = c·v̇·θ_out (Eq8)
    in place of the pass-through pair, and a bookkeeping row defining their
    heat delta as q̇_out − q̇_in (Eq24).
    """
    from .linearize import encode_bilinear_on_model

    vm = model.varmap
    params: ModelParams = model.params
    opts = _options_of(model)
    grids = model.grids
    for s in scenarios:
        for e in network.edges:
            kind = e.component.kind
            if kind not in ("heat_source", "temperature_source"):
                continue
            a = vm("activation", s.id, e.id)
            l = _add_level(model, vm, s, e, a)
            if kind == "heat_source":
                lo, hi = e.component.heat_range
                d = vm("delta_heat", s.id, e.id)
                model.add_constr(
                    [(d, 1.0), (a, -lo), (l, -(hi - lo))], "=", 0.0, tag="Eq22"
                )
                continue
            lo, hi = e.component.temp_range
            tset = model.add_var(f"tset[{s.id},{e.id}]", 0.0, hi)
            vm.register(tset, "source_temp_set", s.id, e.id)
            model.add_constr(
                [(tset, 1.0), (a, -lo), (l, -(hi - lo))], "=", 0.0, tag="Eq23"
            )
            tout = model.add_var(f"tout[{s.id},{e.id}]", 0.0, params.t_max)
            vm.register(tout, "outlet_temp", s.id, e.id)
            th = vm("temp", s.id, e.head)
            tm = params.t_max
            for tv in (th, tout):
                model.add_constr(
                    [(tv, 1.0), (tset, -1.0), (a, tm)], "<=", tm, tag="Eq19"
                )
                model.add_constr(
                    [(tv, 1.0), (tset, -1.0), (a, -tm)], ">=", -tm, tag="Eq20"
                )
            qout = vm("heat_out", s.id, e.id)
            enc = encode_bilinear_on_model(
                model,
                grids[("edge", e.id)],
                vm("flow", s.id, e.id),
                tout,
                qout,
                a,
                logarithmic=opts.logarithmic,
                name=f"qout[{s.id},{e.id}]",
                tag="Eq8",
            )
            if enc is not None:
                for y in enc.binary_vars:
                    model.branch_priority[y] = PRIORITY_EDGE_ENCODING
                model.encodings.append(("source_out", s.id, e.id, enc))
            qm = _edge_q_max(e, params)
            d = model.add_var(f"dq[{s.id},{e.id}]", -qm, qm)
            vm.register(d, "delta_heat", s.id, e.id)
            model.add_constr(
                [(d, 1.0), (qout, -1.0), (vm("heat_in", s.id, e.id), 1.0)],
                "=",
                0.0,
                tag="Eq24",
            )


def assemble_objective(model: MilpModel, network, scenarios, catalog) -> None:
    """Lifespan cost: purchase costs plus per-source energy costs (Eq24).

    Pump power is billed as-is at the pump's energy price; thermal deltas are
    billed as |Δq̇|/efficiency, where the absolute value needs an auxiliary
    variable only when the delta can be negative (cooling or temperature
    sources).
    """
    vm = model.varmap
    for e in network.edges:
        model.add_objective_coef(vm("purchase", e.id), e.component.purchase_cost)
    ols = catalog.operational_lifespan
    for e in network.edges:
        comp = e.component
        if comp.kind == "pump":
            price = catalog.price(comp.energy_source)
            for s in scenarios:
                model.add_objective_coef(
                    vm("pump_power", s.id, e.id), price * ols * s.fraction
                )
        elif comp.kind in ("heat_source", "temperature_source"):
            price = catalog.price(comp.energy_source)
            rate = price * ols / comp.efficiency
            sign_free = comp.kind == "temperature_source" or comp.heat_range[0] < 0.0
            for s in scenarios:
                d = vm("delta_heat", s.id, e.id)
                if sign_free:
                    dlo, dhi = model.var_bounds(d)
                    g = model.add_var(f"g[{s.id},{e.id}]", 0.0, max(abs(dlo), abs(dhi)))
                    vm.register(g, "abs_heat", s.id, e.id)
                    model.add_constr([(g, 1.0), (d, -1.0)], ">=", 0.0, tag="Eq24")
                    model.add_constr([(g, 1.0), (d, 1.0)], ">=", 0.0, tag="Eq24")
                    model.add_objective_coef(g, rate * s.fraction)
                else:
                    model.add_objective_coef(d, rate * s.fraction)


# trust weights for snapping each encoding family to a simplex: at snap
# time the upstream sweep has pinned some tied coordinates (weight 1) while
# hull-interior outputs are still unreliable (weight 0); mixing is matched
# on flow and heat with the temperature implied, products on their inputs
SNAP_TRUST = {
    "edge": (1.0, 1.0, 0.0),
    "vertex": (1.0, 0.0, 1.0),
    "source_out": (1.0, 1.0, 0.0),
    "pump": (1.0, 1.0, 0.0, 1.0),
}


def _make_incumbent_hint(model: MilpModel, network):
    """Build a rounding callback turning a relaxation point into candidate
    integer assignments.

    The first candidate activates every edge carrying flow in the relaxation
    (the relaxed flow field satisfies conservation exactly, so the routing
    survives rounding) and buys whatever is active somewhere.  Relaxed
    pressure coupling can sneak flow onto edges that no integral head
    assignment supports, so fallback candidates retire one active edge at a
    time, weakest flow first, and let the trial solve reroute.

    Each candidate then refines in topological sweeps.  A relaxation point
    rides the convex-hull gap of every product encoding at once, so the
    temperatures it reports deep in the network say little about the real
    operating point; only coordinates adjacent to boundary-pinned values can
    be trusted.  The sweeps therefore snap stage selectors, modulation
    levels, and encoding simplices one vertex layer at a time, re-solving
    between layers so each solve propagates trustworthy coordinates one
    layer further downstream.  Within a layer each snap offers its runner-up
    simplex as well, because the match is made on the trusted coordinates
    alone and the completion the downstream chain needs may sit just across
    a cell diagonal; the caller works through the offered combinations until
    one solves.
    """
    from .linearize import ranked_bit_fixes

    vm = model.varmap
    purchases = vm.by_role("purchase")
    activations = vm.by_role("activation")
    flow_of = {coords: j for coords, j in vm.by_role("flow")}
    stage_groups: Dict[Tuple, List[Tuple[int, int]]] = {}
    for coords, j in vm.by_role("stage"):
        sid, eid, m_i = coords
        stage_groups.setdefault((sid, eid), []).append((m_i, j))
    for entries in stage_groups.values():
        entries.sort()
    level_of: Dict[Tuple, int] = {
        coords: j for coords, j in vm.by_role("level")
        if model.kinds[j] == "binary"
    }

    depth = {network.source: 0}
    rest = [k for k in network.vertices if k != network.source]
    while rest:
        for k in list(rest):
            tails = [e.tail for e in network.in_edges(k)]
            if all(t in depth for t in tails):
                depth[k] = max((depth[t] for t in tails), default=0) + 1
                rest.remove(k)
                break
        else:
            raise AssertionError("network has a cycle")
    tsrc_head = {
        e.head: e for e in network.edges
        if e.component.kind == "temperature_source"
    }
    out_enc_of = {
        (sid, key): enc
        for family, sid, key, enc in model.encodings
        if family == "source_out"
    }
    # vertex mixing snaps at an even rank, edges out of that vertex at the
    # following odd rank, so every snap sees upstream coordinates already
    # pinned by the previous solve; a vertex whose temperature a source edge
    # pins snaps alongside its in-edges, because its triangle and the source
    # outlet cell must agree on the set-point with no leaky solve in between
    edge_rank = {e.id: 2 * depth[e.tail] + 1 for e in network.edges}
    layers: Dict[int, List[Tuple]] = {}
    for entry in model.encodings:
        family, sid, key, enc = entry
        if family == "source_out" and network.edge(key).head in tsrc_head:
            continue  # snapped with the head vertex
        if family == "vertex":
            rank = 2 * depth[key] - 1 if key in tsrc_head else 2 * depth[key]
        else:
            rank = edge_rank[key]
        layers.setdefault(rank, []).append(entry)
    for (sid, eid), entries in stage_groups.items():
        layers.setdefault(edge_rank[eid], []).append(("stage", sid, eid, entries))
    for coords, j in level_of.items():
        layers.setdefault(edge_rank[coords[1]], []).append(("level", coords[0], coords[1], j))

    def topology_fix(x: np.ndarray, banned: frozenset) -> Dict[int, float]:
        fix: Dict[int, float] = {}
        used: Dict[str, bool] = {}
        for coords, j in activations:
            on = coords[1] not in banned and x[flow_of[coords]] > 1e-5
            fix[j] = 1.0 if on else 0.0
            used[coords[1]] = used.get(coords[1], False) or on
        for coords, j in purchases:
            fix[j] = 1.0 if used.get(coords[0], False) else 0.0
        return fix

    def snap_set_point(fix, sid, k, enc, x, base, alts):
        """Joint snap of a set-point vertex and its source edge outlet.

        When the mixed inflow sits off the vertex grid, the pinned
        temperature must land on a shared t gridline for the outlet and
        mixing surfaces to agree on the heat exactly, so the snap targets
        the reconstructed point on that gridline instead of the relaxation
        coordinates.
        """
        e = tsrc_head[k]
        out_enc = out_enc_of.get((sid, e.id))
        if fix[vm("activation", sid, e.id)] < 0.5:
            if out_enc is not None:
                for y in out_enc.binary_vars:
                    base[y] = 0.0
            choices = ranked_bit_fixes(enc, x, SNAP_TRUST["vertex"])
            (alts.append(choices) if len(choices) > 1 else base.update(choices[0]))
            return
        c = model.params.c
        v_tot = sum(
            x[flow_of[(sid, e_in.id)]]
            for e_in in network.in_edges(k)
            if fix[vm("activation", sid, e_in.id)] >= 0.5
        )
        lo, hi = e.component.temp_range
        tau = min(max(x[vm("outlet_temp", sid, e.id)], lo), hi)
        v_bps = np.unique(enc.points[:, 0])
        if np.min(np.abs(v_bps - v_tot)) > 1e-7:
            t_bps = np.unique(enc.points[:, 1])
            below = t_bps[(t_bps <= tau + 1e-9) & (t_bps >= lo - 1e-9)]
            above = t_bps[(t_bps >= lo - 1e-9) & (t_bps <= hi + 1e-9)]
            if below.size:
                tau = float(below.max())
            elif above.size:
                tau = float(above.min())
        choices = ranked_bit_fixes(enc, x, point=(v_tot, tau, c * v_tot * tau))
        (alts.append(choices) if len(choices) > 1 else base.update(choices[0]))
        if out_enc is not None:
            v_e = x[flow_of[(sid, e.id)]]
            choices = ranked_bit_fixes(out_enc, x, point=(v_e, tau, c * v_e * tau))
            (alts.append(choices) if len(choices) > 1 else base.update(choices[0]))

    def snap_layer(fix: Dict[int, float], items, x: np.ndarray):
        base: Dict[int, float] = {}
        alts: List[List[dict]] = []
        for family, sid, key, payload in items:
            if family == "stage":
                if fix[vm("activation", sid, key)] < 0.5:
                    for _, j in payload:
                        base[j] = 0.0
                    continue
                ranked = sorted(payload, key=lambda t: -x[t[1]])
                choices = [
                    {j: 1.0 if j == pick else 0.0 for _, j in payload}
                    for _, pick in ranked[:2]
                ]
                (alts.append(choices) if len(choices) > 1 else base.update(choices[0]))
            elif family == "level":
                if fix[vm("activation", sid, key)] < 0.5:
                    base[payload] = 0.0
                    continue
                r = 1.0 if x[payload] >= 0.5 else 0.0
                alts.append([{payload: r}, {payload: 1.0 - r}])
            elif family == "vertex" and key in tsrc_head:
                snap_set_point(fix, sid, key, payload, x, base, alts)
            elif payload.active_var is not None and fix.get(payload.active_var, 1.0) < 0.5:
                for y in payload.binary_vars:
                    base[y] = 0.0
            else:
                choices = ranked_bit_fixes(payload, x, SNAP_TRUST[family])
                if len(choices) > 1:
                    alts.append(choices)
                else:
                    base.update(choices[0])
        # flip runner-up simplices when the first choices fail: empty set,
        # singles, everything, then pairs, capped so a layer stays cheap
        flips: List[Tuple[int, ...]] = [()]
        flips += [(i,) for i in range(len(alts))]
        if len(alts) > 1:
            flips.append(tuple(range(len(alts))))
        flips += list(itertools.combinations(range(len(alts)), 2))
        for flip in flips[:8]:
            upd = dict(base)
            for i, choices in enumerate(alts):
                upd.update(choices[1] if i in flip else choices[0])
            yield upd

    def hint(x: np.ndarray):
        weight: Dict[str, float] = {}
        for coords, j in activations:
            v = x[flow_of[coords]]
            if v > 1e-5:
                weight[coords[1]] = max(weight.get(coords[1], 0.0), v)
        bans = [frozenset()]
        bans += [frozenset([eid]) for eid in sorted(weight, key=lambda k: weight[k])[:5]]
        for banned in bans:
            fix = topology_fix(x, banned)
            refines = [
                (lambda x1, f=fix, it=items: snap_layer(f, it, x1))
                for _, items in sorted(layers.items())
            ]
            yield fix, refines

    return hint


def _build_shared_grids(network, params, options: Options) -> Dict:
    """Bilinear grids for every edge and every fed vertex on one flow lattice.

    All grids use the same flow step v_max/N and temperature step t_max/M;
    a span only rounds up to a whole number of cells.  Conservation ties the
    product surfaces of adjacent rows together, and two piecewise-linear
    surfaces built on the same lattice agree wherever their domains overlap,
    so a temperature that satisfies one encoding satisfies its neighbours
    too.  Independently sized grids do not have that property: a pump
    feeding a boiler through an off-grid operating point makes the two
    inlet products contradict each other and the model goes infeasible.
    """
    from .linearize import build_bilinear_grid

    n_flow, n_temp = options.grid_resolution
    step = params.v_max / n_flow if params.v_max > 0 else 0.0

    def lattice(span):
        if step <= 0.0 or span <= 0.0:
            return build_bilinear_grid(span, params.t_max, params.c, (1, n_temp))
        cells = max(1, int(np.ceil(span / step - 1e-9)))
        return build_bilinear_grid(cells * step, params.t_max, params.c, (cells, n_temp))

    grids = {}
    for e in network.edges:
        grids[("edge", e.id)] = lattice(e.component.flow_capacity)
    for k in network.vertices:
        in_edges = network.in_edges(k)
        if not in_edges:
            continue
        grids[("vertex", k)] = lattice(sum(e.component.flow_capacity for e in in_edges))
    return grids


def assemble_quasi_stationary(network, loads, catalog, options: Optional[Options] = None) -> MilpModel:
    """Build the full synthesis model for a quasi-stationary load spec.

    Orchestrates the four assemblers, then adds the boundary rows (source
    temperature and head datum, sink demand, temperature window, minimum
    head) and the vertex-order acyclicity rows over purchase binaries.  The
    returned model carries varmap, params, options, grids, and
    branch_priority attributes for decoding and solving.
    """
    from .domain import InputError, validate_load_spec

    options = options or Options()
    if loads.mode != "quasi_stationary":
        raise InputError("loads.mode", "expected quasi_stationary mode")
    diags = validate_load_spec(loads, network)
    if diags:
        raise InputError("loads", diags[0])
    scenarios = loads.scenarios
    params = derive_params(network, loads, catalog, options)
    model = MilpModel(name="synthesis")
    vm = _ensure_state(model)
    model.params = params
    model.options = options
    model.grids = grids = _build_shared_grids(network, params, options)
    assemble_fluid(model, network, scenarios, params)
    assemble_heat(model, network, scenarios, params, grids)
    assemble_thermal_components(model, network, scenarios)
    assemble_objective(model, network, scenarios, catalog)
    for s in scenarios:
        model.add_constr(
            [(vm("temp", s.id, network.source), 1.0)], "=", s.source_temp, tag="boundary"
        )
        model.add_constr([(vm("head", s.id, network.source), 1.0)], "=", 0.0, tag="boundary")
        model.add_constr(
            [(vm("flow", s.id, e.id), 1.0) for e in network.in_edges(network.sink)],
            "=",
            s.sink_demand,
            tag="boundary",
        )
        tsink = vm("temp", s.id, network.sink)
        lo, hi = s.sink_temp_window
        model.add_constr([(tsink, 1.0)], ">=", lo, tag="boundary")
        model.add_constr([(tsink, 1.0)], "<=", hi, tag="boundary")
        model.add_constr(
            [(vm("head", s.id, network.sink), 1.0)], ">=", s.sink_min_head, tag="boundary"
        )
    n_v = float(len(network.vertices))
    for k in network.vertices:
        u = model.add_var(f"u[{k}]", 0.0, n_v)
        vm.register(u, "order", k)
    for e in network.edges:
        model.add_constr(
            [
                (vm("order", e.tail), 1.0),
                (vm("order", e.head), -1.0),
                (vm("purchase", e.id), n_v),
            ],
            "<=",
            n_v - 1.0,
            tag="acyclicity",
        )
    model.incumbent_hint = _make_incumbent_hint(model, network)
    return model


def _clean(val: float) -> float:
    return float(val) + 0.0  # normalizes -0.0


def decode_solution(model: MilpModel, x, network, loads, catalog) -> Dict:
    """Turn a raw solution vector into the nested report dictionary.

    Binaries are rounded; floats are normalized so repeated solves of the
    same model serialize byte-identically.  The cost breakdown recomputes
    investment and per-energy-source terms from the decoded values with the
    same formula the objective uses.
    """
    vm: VariableMap = model.varmap
    x = np.asarray(x, dtype=float)
    scenarios = loads.scenarios if loads.mode == "quasi_stationary" else ()
    purchases = {
        e.id: int(round(x[vm("purchase", e.id)])) for e in network.edges
    }
    invest = sum(
        e.component.purchase_cost * purchases[e.id] for e in network.edges
    )
    energy: Dict[str, float] = {}
    ols = catalog.operational_lifespan
    out_scen = {}
    for s in scenarios:
        edges = {}
        for e in network.edges:
            comp = e.component
            rec = {
                "active": int(round(x[vm("activation", s.id, e.id)])),
                "flow": _clean(x[vm("flow", s.id, e.id)]),
                "head_gain": _clean(x[vm("head_gain", s.id, e.id)]),
                "heat_in": _clean(x[vm("heat_in", s.id, e.id)]),
                "heat_out": _clean(x[vm("heat_out", s.id, e.id)]),
            }
            if vm.has("delta_heat", s.id, e.id):
                rec["delta_heat"] = _clean(x[vm("delta_heat", s.id, e.id)])
            if vm.has("level", s.id, e.id):
                rec["level"] = _clean(x[vm("level", s.id, e.id)])
            if vm.has("source_temp_set", s.id, e.id):
                rec["source_temp_set"] = _clean(x[vm("source_temp_set", s.id, e.id)])
            if comp.kind == "pump":
                rec["pump_speed"] = _clean(x[vm("pump_speed", s.id, e.id)])
                rec["pump_power"] = _clean(x[vm("pump_power", s.id, e.id)])
                price = catalog.price(comp.energy_source)
                energy[comp.energy_source] = energy.get(comp.energy_source, 0.0) + (
                    price * ols * s.fraction * rec["pump_power"]
                )
            elif comp.kind in ("heat_source", "temperature_source"):
                price = catalog.price(comp.energy_source)
                energy[comp.energy_source] = energy.get(comp.energy_source, 0.0) + (
                    price * ols * s.fraction * abs(rec["delta_heat"]) / comp.efficiency
                )
            edges[e.id] = rec
        vertices = {
            k: {
                "head": _clean(x[vm("head", s.id, k)]),
                "temp": _clean(x[vm("temp", s.id, k)]),
            }
            for k in network.vertices
        }
        out_scen[s.id] = {"edges": edges, "vertices": vertices}
    from .linearize import error_bound

    grids = getattr(model, "grids", {})
    bounds = {
        "edges": {key[1]: _clean(error_bound(g)) for key, g in grids.items() if key[0] == "edge"},
        "vertices": {key[1]: _clean(error_bound(g)) for key, g in grids.items() if key[0] == "vertex"},
    }
    all_bounds = list(bounds["edges"].values()) + list(bounds["vertices"].values())
    bounds["max"] = max(all_bounds) if all_bounds else 0.0
    return {
        "objective": _clean(model.objective_value(x)),
        "purchases": purchases,
        "scenarios": out_scen,
        "cost_breakdown": {
            "invest": _clean(invest),
            "energy": {k: _clean(v) for k, v in sorted(energy.items())},
        },
        "linearization": bounds,
    }
