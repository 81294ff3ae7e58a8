"""Exact physics checks and the brute-force synthesis oracle.

check_solution re-evaluates a solution report family by family, computing
heat fluxes and mixing temperatures from the nonlinear relations rather than
the linearized surfaces the solver saw.  brute_force_optimum enumerates
small series-parallel instances outright.  Neither function touches the
model assembly or the encodings, so agreement between the solver and this
module is evidence, not tautology.
"""

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .domain import InputError

__all__ = ["ValidationReport", "check_solution", "brute_force_optimum"]

_EPS = 1e-9


@dataclass
class ValidationReport:
    """Residual summary of a solution re-evaluated against exact physics.

    family_residuals holds the worst violation per linear constraint family.
    The nonlinear residuals live in their own fields: heat_residual is the
    largest |q - c*v*t| over active edges in kW, mixing_residual the largest
    deviation of a vertex temperature from the exact mixing temperature in
    degrees, tank_residual the largest volume-balance defect in cubic meters.
    verdict is true iff every residual passed its tolerance; failures lists
    the checks that did not.
    """

    family_residuals: Dict[str, float]
    heat_residual: float
    mixing_residual: float
    tank_residual: float
    objective_delta: float
    tolerances: Dict[str, float]
    failures: List[str]
    verdict: bool

    def to_json(self) -> str:
        payload = {
            "family_residuals": {
                k: self.family_residuals[k] for k in sorted(self.family_residuals)
            },
            "heat_residual": self.heat_residual,
            "mixing_residual": self.mixing_residual,
            "tank_residual": self.tank_residual,
            "objective_delta": self.objective_delta,
            "tolerances": {k: self.tolerances[k] for k in sorted(self.tolerances)},
            "failures": list(self.failures),
            "verdict": "pass" if self.verdict else "fail",
        }
        return json.dumps(payload, indent=2)


def _fetch(mapping, key, what):
    try:
        return mapping[key]
    except (KeyError, TypeError, IndexError):
        raise InputError("solution", f"missing {what}") from None


def _level_residual(control, level):
    """Distance of a level value from its control taxonomy's admissible set."""
    if control.type == "single_stage":
        return min(abs(level), abs(level - 1.0))
    if control.type == "multi_stage":
        return min(abs(level - m) for m in control.levels)
    return max(0.0, -level, level - 1.0)


def _pump_residual(comp, v, dh, power, speed):
    """Distance of an operating point from the nearest sampled speed curve."""
    best = None
    for cv in comp.pump_curves:
        vs = [p[0] for p in cv.points]
        head = float(np.interp(v, vs, [p[1] for p in cv.points]))
        pw = float(np.interp(v, vs, [p[2] for p in cv.points]))
        off = max(0.0, vs[0] - v, v - vs[-1])
        r = max(abs(speed - cv.speed), abs(dh - head), abs(power - pw), off)
        if best is None or r < best:
            best = r
    return best if best is not None else 0.0


def check_solution(network, loads, catalog, solution, tolerances=None):
    """Re-evaluate a solution report against the exact constraint families.

    solution is the dictionary produced by decoding a solve (purchases plus
    per-scenario or per-interval operating points).  tolerances may carry
    the keys linear (default 1e-6), nonlinear (default: the linearization
    bound the solution itself reports), mixing (degrees; default scales the
    nonlinear bound by c times the local inflow), tank, and objective.
    Raises InputError when a referenced value is missing from the report.
    """
    tolerances = dict(tolerances or {})
    reported = solution.get("linearization", {})
    tol_lin = float(tolerances.setdefault("linear", 1e-6))
    tol_non = float(tolerances.setdefault("nonlinear", float(reported.get("max", 0.0))))
    tol_tank = float(tolerances.setdefault("tank", max(tol_non, tol_lin)))
    c = catalog.volumetric_heat_capacity

    fam: Dict[str, float] = {}
    failures: List[str] = []
    state = {"heat": 0.0, "mix": 0.0, "mix_fail": False}

    def bump(family, residual):
        fam[family] = max(fam.get(family, 0.0), float(residual))

    purchases = _fetch(solution, "purchases", "purchases")

    def check_point(tag, boundary, edges, verts, tank_net):
        for e in network.edges:
            if e.component.kind == "tank":
                continue
            rec = _fetch(edges, e.id, f"edge {e.id} in {tag}")
            comp = e.component
            a = float(_fetch(rec, "active", f"active flag of {e.id}"))
            v = float(_fetch(rec, "flow", f"flow of {e.id}"))
            qin = float(_fetch(rec, "heat_in", f"heat_in of {e.id}"))
            qout = float(_fetch(rec, "heat_out", f"heat_out of {e.id}"))
            bump("Eq1", max(0.0, a - float(_fetch(purchases, e.id, f"purchase of {e.id}"))))
            bump("Eq5", max(0.0, v - comp.flow_capacity * a))
            if a < 0.5:
                # a dark edge carries nothing; its head and temperature
                # couplings are released
                bump("Eq11", abs(qin))
                bump("Eq12", abs(qout))
                bump("Eq5", abs(v))
                if "level" in rec:
                    bump("Eq21", abs(float(rec["level"])))
                continue
            hh = float(_fetch(verts, e.head, f"vertex {e.head}")["head"])
            ht = float(_fetch(verts, e.tail, f"vertex {e.tail}")["head"])
            dh = float(rec["head_gain"]) if comp.kind == "pump" else comp.pressure_drop
            bump("Eq3", abs(hh - ht - dh))
            t_tail = float(verts[e.tail]["temp"])
            state["heat"] = max(state["heat"], abs(qin - c * v * t_tail))
            if comp.kind == "pump":
                bump(
                    "pump_curve",
                    _pump_residual(
                        comp,
                        v,
                        float(_fetch(rec, "head_gain", f"head_gain of {e.id}")),
                        float(_fetch(rec, "pump_power", f"pump_power of {e.id}")),
                        float(_fetch(rec, "pump_speed", f"pump_speed of {e.id}")),
                    ),
                )
                bump("Eq14", abs(qout - qin))
            elif comp.kind == "heat_source":
                level = float(_fetch(rec, "level", f"level of {e.id}"))
                lo, hi = comp.heat_range
                d = float(_fetch(rec, "delta_heat", f"delta_heat of {e.id}"))
                bump("Eq21", _level_residual(comp.control, level))
                bump("Eq22", abs(d - (lo + (hi - lo) * level)))
                bump("Eq14", abs(qout - qin - d))
            elif comp.kind == "temperature_source":
                level = float(_fetch(rec, "level", f"level of {e.id}"))
                lo, hi = comp.temp_range
                tset = float(_fetch(rec, "source_temp_set", f"set point of {e.id}"))
                bump("Eq21", _level_residual(comp.control, level))
                bump("Eq23", abs(tset - (lo + (hi - lo) * level)))
                bump("Eq19", abs(float(verts[e.head]["temp"]) - tset))
                d = float(_fetch(rec, "delta_heat", f"delta_heat of {e.id}"))
                bump("Eq24", abs(d - (qout - qin)))
                state["heat"] = max(state["heat"], abs(qout - c * v * tset))
            else:
                bump("Eq14", abs(qout - qin))
        for k in network.vertices:
            ins = [e for e in network.in_edges(k) if e.component.kind != "tank"]
            outs = [e for e in network.out_edges(k) if e.component.kind != "tank"]
            if not ins and not outs:
                continue
            vin = sum(float(edges[e.id]["flow"]) for e in ins)
            vout = sum(float(edges[e.id]["flow"]) for e in outs)
            net = tank_net.get(k, 0.0)
            if k not in (network.source, network.sink):
                bump("Eq6", abs(vin - vout - net))
                win = sum(float(edges[e.id]["heat_out"]) for e in ins)
                wout = sum(float(edges[e.id]["heat_in"]) for e in outs)
                t_k = float(verts[k]["temp"])
                bump("Eq13", abs(win - wout - c * t_k * net))
            if ins and not any(
                e.component.kind == "tank" for e in network.in_edges(k) + network.out_edges(k)
            ):
                if vin > max(tol_lin, _EPS):
                    w = sum(float(edges[e.id]["heat_out"]) for e in ins)
                    t_mix = w / (c * vin)
                    dev = abs(float(verts[k]["temp"]) - t_mix)
                    state["mix"] = max(state["mix"], dev)
                    mix_tol = tolerances.get("mixing", tol_non / (c * vin))
                    if dev > mix_tol:
                        state["mix_fail"] = True
        bump("boundary", abs(float(verts[network.source]["temp"]) - boundary["source_temp"]))
        bump("boundary", abs(float(verts[network.source]["head"])))
        sink_in = sum(
            float(edges[e.id]["flow"])
            for e in network.in_edges(network.sink)
            if e.component.kind != "tank"
        )
        bump("boundary", abs(sink_in - boundary["demand"]))
        lo, hi = boundary["window"]
        t_sink = float(verts[network.sink]["temp"])
        bump("boundary", max(0.0, lo - t_sink, t_sink - hi))
        bump("boundary", max(0.0, boundary["min_head"] - float(verts[network.sink]["head"])))

    ols = catalog.operational_lifespan
    recomputed = 0.0

    def energy_cost(edges, weight):
        total = 0.0
        for e in network.edges:
            comp = e.component
            if comp.kind == "pump":
                total += catalog.price(comp.energy_source) * weight * float(
                    edges[e.id].get("pump_power", 0.0)
                )
            elif comp.kind in ("heat_source", "temperature_source"):
                total += (
                    catalog.price(comp.energy_source)
                    * weight
                    * abs(float(edges[e.id].get("delta_heat", 0.0)))
                    / comp.efficiency
                )
        return total

    if loads.mode == "quasi_stationary":
        points = _fetch(solution, "scenarios", "scenarios block")
        for s in loads.scenarios:
            rec = _fetch(points, s.id, f"scenario {s.id}")
            boundary = {
                "demand": s.sink_demand,
                "window": s.sink_temp_window,
                "min_head": s.sink_min_head,
                "source_temp": s.source_temp,
            }
            check_point(s.id, boundary, rec["edges"], rec["vertices"], {})
            recomputed += energy_cost(rec["edges"], ols * s.fraction)
    else:
        intervals = _fetch(solution, "intervals", "intervals block")
        total_time = sum(float(iv["duration"]) for iv in intervals)
        scale = ols / total_time if total_time > 0 else 0.0
        tanks = solution.get("tanks", {})
        tank_tail = {e.id: e.tail for e in network.edges if e.component.kind == "tank"}
        for idx, iv in enumerate(intervals):
            seg = loads.profile[int(_fetch(iv, "segment", f"segment of interval {idx}"))]
            boundary = {
                "demand": seg.sink_demand,
                "window": seg.sink_temp_window,
                "min_head": seg.sink_min_head,
                "source_temp": seg.source_temp,
            }
            tank_net = {}
            for tid, tail in tank_tail.items():
                flows = _fetch(tanks, tid, f"tank {tid}")["net_inflow"]
                tank_net[tail] = tank_net.get(tail, 0.0) - float(flows[idx])
            check_point(f"interval {idx}", boundary, iv["edges"], iv["vertices"], tank_net)
            recomputed += energy_cost(iv["edges"], scale * float(iv["duration"]))
        for tid, tail in tank_tail.items():
            trec = _fetch(tanks, tid, f"tank {tid}")
            cap = network.edge(tid).component.tank_capacity
            vol = float(trec.get("initial", 0.0))
            bump("tank_capacity", max(0.0, -vol, vol - cap))
            for idx, iv in enumerate(intervals):
                nxt = float(_fetch(trec["volumes"], idx, f"volume of {tid}"))
                net = float(trec["net_inflow"][idx])
                state["tank"] = max(
                    state.get("tank", 0.0), abs(nxt - vol - net * float(iv["duration"]))
                )
                bump("tank_capacity", max(0.0, -nxt, nxt - cap))
                vol = nxt
            bump("cyclic", max(0.0, float(trec.get("initial", 0.0)) - vol))

    invest = sum(
        e.component.purchase_cost * float(_fetch(purchases, e.id, f"purchase of {e.id}"))
        for e in network.edges
    )
    objective = float(_fetch(solution, "objective", "objective"))
    obj_delta = abs(objective - invest - recomputed)
    tol_obj = float(tolerances.setdefault("objective", tol_lin * max(1.0, abs(objective))))

    for family in sorted(fam):
        tol = tol_tank if family in ("tank_capacity", "cyclic") else tol_lin
        if fam[family] > tol:
            failures.append(f"{family}: {fam[family]:.3e} > {tol:.3e}")
    if state["heat"] > tol_non:
        failures.append(f"heat product: {state['heat']:.3e} > {tol_non:.3e}")
    if state["mix_fail"]:
        failures.append(f"mixing temperature: {state['mix']:.3e}")
    if state.get("tank", 0.0) > tol_tank:
        failures.append(f"tank balance: {state['tank']:.3e} > {tol_tank:.3e}")
    if obj_delta > tol_obj:
        failures.append(f"objective: {obj_delta:.3e} > {tol_obj:.3e}")

    return ValidationReport(
        family_residuals=fam,
        heat_residual=state["heat"],
        mixing_residual=state["mix"],
        tank_residual=state.get("tank", 0.0),
        objective_delta=obj_delta,
        tolerances=tolerances,
        failures=failures,
        verdict=not failures,
    )


# --- brute-force oracle -----------------------------------------------------


def _sp_tree(network):
    """Series-parallel decomposition of the edge multigraph.

    Repeatedly merges parallel edges and contracts degree-(1,1) internal
    vertices; a network is series-parallel exactly when this reduces it to a
    single source-to-sink item.  Leaves are edge ids, inner nodes ("S", kids)
    and ("P", kids) with S kids ordered tail to head.
    """
    items = [
        (e.tail, e.head, ("leaf", e.id))
        for e in sorted(network.edges, key=lambda e: e.id)
    ]

    def flat(tag, node):
        return list(node[1]) if node[0] == tag else [node]

    while len(items) > 1:
        for i in range(len(items)):
            ti, hi_, ni = items[i]
            hit = next(
                (j for j in range(i + 1, len(items)) if items[j][:2] == (ti, hi_)), None
            )
            if hit is not None:
                node = ("P", flat("P", ni) + flat("P", items[hit][2]))
                items[i] = (ti, hi_, node)
                items.pop(hit)
                break
        else:
            for k in sorted({it[1] for it in items}):
                if k in (network.source, network.sink):
                    continue
                ins = [i for i, it in enumerate(items) if it[1] == k]
                outs = [i for i, it in enumerate(items) if it[0] == k]
                if len(ins) == 1 and len(outs) == 1 and ins[0] != outs[0]:
                    a, b = items[ins[0]], items[outs[0]]
                    node = ("S", flat("S", a[2]) + flat("S", b[2]))
                    items[min(ins[0], outs[0])] = (a[0], b[1], node)
                    items.pop(max(ins[0], outs[0]))
                    break
            else:
                raise InputError("network", "non-series-parallel topology")
    tail, head, node = items[0]
    if (tail, head) != (network.source, network.sink):
        raise InputError("network", "non-series-parallel topology")
    return node


def _oracle_envelopes(network, loads, catalog):
    """Temperature and head ceilings from catalog bounds and boundary data."""
    points = loads.scenarios if loads.mode == "quasi_stationary" else loads.profile
    temps = [0.0]
    for s in points:
        temps.append(s.sink_temp_window[1])
        temps.append(s.source_temp)
    for e in network.edges:
        if e.component.temp_range is not None:
            temps.append(e.component.temp_range[1])
    lift = sum(
        max((pt[1] for cv in e.component.pump_curves for pt in cv.points), default=0.0)
        for e in network.edges
        if e.component.kind == "pump"
    )
    need = max((s.sink_min_head for s in points), default=0.0)
    return max(temps), max(lift, need) + 1.0


class _Refit:
    """Set point of a continuous temperature source left open for the join.

    The exact physics pins the head vertex of an active temperature source
    to its set point, so at a mixing vertex the set point must equal the
    mixed temperature.  Solving for it instead of scanning the level grid
    keeps those solutions exact.
    """

    __slots__ = ("eid", "v", "t_in", "lo", "hi", "rate")

    def __init__(self, eid, v, t_in, lo, hi, rate):
        self.eid = eid
        self.v = v
        self.t_in = t_in
        self.lo = lo
        self.hi = hi
        self.rate = rate

    def cost(self, tset):
        return self.rate * abs(self.v) * abs(tset - self.t_in)


class _Oracle:
    def __init__(self, network, loads, catalog, discretization):
        self.network = network
        self.catalog = catalog
        self.c = catalog.volumetric_heat_capacity
        self.ols = catalog.operational_lifespan
        self.disc = max(2, int(discretization))
        self.t_max, self.h_max = _oracle_envelopes(network, loads, catalog)
        self.tree = _sp_tree(network)
        self.budget = 2_000_000
        self.caps = {e.id: e.component.flow_capacity for e in network.edges}

    def spend(self, n=1):
        self.budget -= n
        if self.budget < 0:
            raise InputError("oracle", "instance too large")

    def levels(self, control):
        if control.type == "single_stage":
            return (0.0, 1.0)
        if control.type == "multi_stage":
            return tuple(sorted(set(control.levels)))
        return tuple(np.linspace(0.0, 1.0, self.disc))

    def node_cap(self, node, active):
        kind, payload = node
        if kind == "leaf":
            return self.caps[payload] if payload in active else 0.0
        if kind == "S":
            return min(self.node_cap(ch, active) for ch in payload)
        return sum(self.node_cap(ch, active) for ch in payload)

    # options are tuples (dh, p_lo, p_hi, t_out, cost, pin, dec): dh is the
    # head change over the subtree or None when an inactive edge breaks the
    # chain, p_lo/p_hi bound the head profile relative to the entry vertex,
    # pin is a required temperature at the exit vertex (float or _Refit)

    def eval_leaf(self, eid, v, t_in, active, weight):
        self.spend()
        e = self.network.edge(eid)
        comp = e.component
        if eid not in active:
            if v > _EPS:
                return []
            return [(None, 0.0, 0.0, t_in, 0.0, None, ())]
        if v > comp.flow_capacity + 1e-9:
            return []
        dec_flow = ((eid, "flow", v),)
        if comp.kind == "pipe":
            d = comp.pressure_drop
            return [(d, min(0.0, d), max(0.0, d), t_in, 0.0, None, dec_flow)]
        if comp.kind == "pump":
            out = []
            price = self.catalog.price(comp.energy_source)
            for cv in comp.pump_curves:
                vs = [p[0] for p in cv.points]
                if v < vs[0] - 1e-9 or v > vs[-1] + 1e-9:
                    continue
                head = float(np.interp(v, vs, [p[1] for p in cv.points]))
                power = float(np.interp(v, vs, [p[2] for p in cv.points]))
                dec = dec_flow + ((eid, "speed", cv.speed),)
                out.append(
                    (head, min(0.0, head), max(0.0, head), t_in, price * weight * power, None, dec)
                )
            return out
        price = self.catalog.price(comp.energy_source)
        rate = price * weight / comp.efficiency
        d = comp.pressure_drop
        out = []
        if comp.kind == "heat_source":
            lo, hi = comp.heat_range
            for level in self.levels(comp.control):
                self.spend()
                dq = lo + (hi - lo) * level
                if v > _EPS:
                    t_out = t_in + dq / (self.c * v)
                    if not -1e-9 <= t_out <= self.t_max + 1e-9:
                        continue
                elif abs(dq) > 1e-9:
                    continue
                else:
                    t_out = t_in
                dec = dec_flow + ((eid, "level", level),)
                out.append((d, min(0.0, d), max(0.0, d), t_out, rate * abs(dq), None, dec))
            return out
        lo, hi = comp.temp_range
        if comp.control.type == "continuous":
            # the open set point is resolved exactly where the pin lands;
            # the grid options below remain for mid-chain positions
            pin = _Refit(eid, v, t_in, lo, hi, rate)
            out.append((d, min(0.0, d), max(0.0, d), None, 0.0, pin, dec_flow))
        for level in self.levels(comp.control):
            self.spend()
            tset = lo + (hi - lo) * level
            dq = self.c * v * (tset - t_in)
            t_out = tset if v > _EPS else t_in
            dec = dec_flow + ((eid, "level", level),)
            out.append((d, min(0.0, d), max(0.0, d), t_out, rate * abs(dq), tset, dec))
        return out

    def eval_node(self, node, v, t_in, active, weight):
        kind, payload = node
        if kind == "leaf":
            opts = self.eval_leaf(payload, v, t_in, active, weight)
        elif kind == "S":
            opts = self.eval_series(payload, v, t_in, active, weight)
        else:
            opts = self.eval_parallel(payload, v, t_in, active, weight)
        # dominated options only waste budget upstream
        best = {}
        for opt in opts:
            dh, p_lo, p_hi, t_out, cost, pin, dec = opt
            key = (
                None if dh is None else round(dh, 9),
                None if dh is None else round(p_lo, 9),
                None if dh is None else round(p_hi, 9),
                None if t_out is None else round(t_out, 9),
                pin.eid if isinstance(pin, _Refit) else (None if pin is None else round(pin, 9)),
            )
            cur = best.get(key)
            if cur is None or (cost, dec) < (cur[4], cur[6]):
                best[key] = opt
        return list(best.values())

    def eval_series(self, children, v, t_in, active, weight):
        opts = [(0.0, 0.0, 0.0, t_in, 0.0, None, ())]
        for idx, child in enumerate(children):
            last = idx == len(children) - 1
            new = []
            for dh0, lo0, hi0, t0, c0, _pin0, d0 in opts:
                if t0 is None:
                    continue  # an unresolved set point cannot feed onward
                for dh1, lo1, hi1, t1, c1, pin1, d1 in self.eval_node(
                    child, v, t0, active, weight
                ):
                    self.spend()
                    if not last and t1 is None:
                        continue
                    if dh0 is None or dh1 is None:
                        dh, lo, hi = None, 0.0, 0.0
                    else:
                        dh = dh0 + dh1
                        lo = min(lo0, dh0 + lo1)
                        hi = max(hi0, dh0 + hi1)
                    new.append((dh, lo, hi, t1, c0 + c1, pin1, d0 + d1))
            opts = new
            if not opts:
                return []
        return opts

    def eval_parallel(self, children, v, t_in, active, weight):
        caps = [self.node_cap(ch, active) for ch in children]
        if v > sum(caps) + 1e-9:
            return []
        out = []
        n_samp = max(9, 2 * self.disc + 1)

        def assign(idx, v_left, chosen):
            if idx == len(children) - 1:
                if v_left > caps[idx] + 1e-9:
                    return
                out_opts = self.eval_node(children[idx], v_left, t_in, active, weight)
                self.combine(children, chosen + [(v_left, out_opts)], v, t_in, out)
                return
            rest = sum(caps[idx + 1 :])
            lo_v = max(0.0, v_left - rest)
            hi_v = min(caps[idx], v_left)
            if lo_v > hi_v + 1e-9:
                return
            samples = {round(x, 12) for x in np.linspace(lo_v, hi_v, n_samp)}
            samples.update((round(lo_v, 12), round(hi_v, 12)))
            for x in sorted(samples):
                opts = self.eval_node(children[idx], x, t_in, active, weight)
                if not opts:
                    continue
                assign(idx + 1, v_left - x, chosen + [(x, opts)])

        assign(0, v, [])
        return out

    def combine(self, children, branches, v, t_in, out):
        """Cross one split assignment's branch options into joint options."""

        def rec(idx, dh, p_lo, p_hi, cost, dec, mix_v, mix_w, pins):
            self.spend()
            if idx == len(branches):
                opt = self.resolve_join(dh, p_lo, p_hi, cost, dec, mix_v, mix_w, pins, v, t_in)
                if opt is not None:
                    out.append(opt)
                return
            x, opts = branches[idx]
            for dh1, lo1, hi1, t1, c1, pin1, d1 in opts:
                if dh is not None and dh1 is not None and abs(dh - dh1) > 1e-7:
                    continue
                ndh = dh if dh is not None else dh1
                nlo, nhi = p_lo, p_hi
                if dh1 is not None:
                    nlo = min(nlo, lo1)
                    nhi = max(nhi, hi1)
                w = None
                if t1 is not None:
                    w = mix_w + self.c * x * t1
                elif x > _EPS and not isinstance(pin1, _Refit):
                    continue
                elif x <= _EPS:
                    w = mix_w
                npins = pins + [pin1] if pin1 is not None else pins
                rec(
                    idx + 1,
                    ndh,
                    nlo,
                    nhi,
                    cost + c1,
                    dec + d1,
                    mix_v + x,
                    mix_w if w is None else w,
                    npins if not isinstance(pin1, _Refit) else pins + [(pin1, x)],
                )

        rec(0, None, 0.0, 0.0, 0.0, (), 0.0, 0.0, [])

    def resolve_join(self, dh, p_lo, p_hi, cost, dec, mix_v, mix_w, pins, v, t_in):
        """Mix the arriving flows and settle every set-point requirement."""
        refits = [p for p in pins if isinstance(p, tuple)]
        fixed = [p for p in pins if not isinstance(p, tuple)]
        if fixed and max(fixed) - min(fixed) > 1e-9:
            return None
        target = fixed[0] if fixed else None
        if refits:
            pinned_v = sum(x for _, x in refits)
            free_w = mix_w
            if target is None:
                if v - pinned_v > _EPS:
                    target = free_w / (self.c * (v - pinned_v))
                else:
                    # all inflow is pinned: the set point is a free choice,
                    # settled by the cheapest admissible temperature
                    lo = max(r.lo for r, _ in refits)
                    hi = min(r.hi for r, _ in refits)
                    if lo > hi + 1e-9:
                        return None
                    cands = {lo, hi}
                    cands.update(min(max(r.t_in, lo), hi) for r, _ in refits)
                    target = min(
                        cands, key=lambda t: (sum(r.cost(t) for r, _ in refits), t)
                    )
            for r, x in refits:
                if not r.lo - 1e-9 <= target <= r.hi + 1e-9:
                    return None
                cost += r.cost(target)
                level = (target - r.lo) / (r.hi - r.lo) if r.hi > r.lo else 0.0
                dec = dec + ((r.eid, "level", level), (r.eid, "refit", 1.0))
                mix_w += self.c * x * target
        if mix_v > _EPS:
            t_mix = mix_w / (self.c * mix_v)
            if target is not None and abs(t_mix - target) > 1e-7:
                return None
        else:
            t_mix = target if target is not None else t_in
        if not -1e-9 <= t_mix <= self.t_max + 1e-9:
            return None
        return (dh, p_lo, p_hi, t_mix, cost, None, dec)

    def evaluate(self, active, boundary, weight):
        """Best operating cost of one activation set, or None."""
        demand = boundary["demand"]
        opts = []
        for opt in self.eval_node(self.tree, demand, boundary["source_temp"], active, weight):
            dh, p_lo, p_hi, t_out, cost, pin, dec = opt
            lo_w, hi_w = boundary["window"]
            if isinstance(pin, _Refit):
                # an active set point pins the sink temperature, so the
                # window applies whether or not anything flows
                lo = max(pin.lo, lo_w)
                hi = min(pin.hi, hi_w)
                if lo > hi + 1e-9:
                    continue
                tset = min(max(pin.t_in, lo), hi)
                cost += pin.cost(tset)
                level = (tset - pin.lo) / (pin.hi - pin.lo) if pin.hi > pin.lo else 0.0
                dec = dec + ((pin.eid, "level", level), (pin.eid, "refit", 1.0))
                t_out = tset
            elif pin is not None:
                # an active set point fixes the sink temperature outright
                if demand > _EPS and abs(t_out - pin) > 1e-9:
                    continue
                t_out = pin
            if (demand > _EPS or pin is not None) and not (
                lo_w - 1e-9 <= t_out <= hi_w + 1e-9
            ):
                continue
            if dh is None:
                if boundary["min_head"] > self.h_max + 1e-9:
                    continue
            else:
                if p_lo < -1e-7 or p_hi > self.h_max + 1e-7:
                    continue
                if dh < max(0.0, boundary["min_head"]) - 1e-7 or dh > self.h_max + 1e-7:
                    continue
            opts.append((cost, dec))
        if not opts:
            return None
        return min(opts, key=lambda t: (t[0], _dec_key(t[1])))


def _dec_key(dec):
    return tuple(sorted((eid, name, round(val, 12)) for eid, name, val in dec))


def _canonical(network, active):
    """Active edges that sit on some source-to-sink path within the set."""
    fwd = {network.source}
    grew = True
    while grew:
        grew = False
        for e in network.edges:
            if e.id in active and e.tail in fwd and e.head not in fwd:
                fwd.add(e.head)
                grew = True
    back = {network.sink}
    grew = True
    while grew:
        grew = False
        for e in network.edges:
            if e.id in active and e.head in back and e.tail not in back:
                back.add(e.tail)
                grew = True
    return frozenset(
        e.id for e in network.edges if e.id in active and e.tail in fwd and e.head in back
    )


def brute_force_optimum(network, loads, catalog, discretization=21):
    """Exhaustive minimum over purchases, activations, and control grids.

    Enumerates purchase subsets and, per scenario, activation subsets whose
    edges lie on source-to-sink paths; control levels and set points move on
    a grid of `discretization` values per continuous range while parallel
    flow splits are sampled on a grid twice as fine.  Returns {cost, band,
    decisions} where band is the one-step cost sensitivity of the winning
    grid decisions.  Restricted to quasi-stationary series-parallel
    instances of at most 10 edges.
    """
    if loads.mode != "quasi_stationary":
        raise InputError("oracle", "only quasi_stationary instances are supported")
    edges = sorted(e.id for e in network.edges)
    if len(edges) > 10:
        raise InputError("oracle", "instance too large")
    oracle = _Oracle(network, loads, catalog, discretization)

    # operating cost is separable per scenario once the active set is known
    per_scenario: List[Dict[frozenset, Tuple[float, tuple]]] = []
    for s in loads.scenarios:
        boundary = {
            "demand": s.sink_demand,
            "window": s.sink_temp_window,
            "min_head": s.sink_min_head,
            "source_temp": s.source_temp,
        }
        weight = oracle.ols * s.fraction
        table: Dict[frozenset, Tuple[float, tuple]] = {}
        for mask in range(1 << len(edges)):
            active = frozenset(edges[i] for i in range(len(edges)) if mask >> i & 1)
            if _canonical(network, active) != active:
                continue
            got = oracle.evaluate(active, boundary, weight)
            if got is not None:
                table[active] = got
        per_scenario.append(table)

    best = None
    for mask in range(1 << len(edges)):
        purchased = frozenset(edges[i] for i in range(len(edges)) if mask >> i & 1)
        invest = sum(network.edge(eid).component.purchase_cost for eid in purchased)
        if best is not None and invest > best[0] + 1e-12:
            continue
        total = invest
        picks = []
        feasible = True
        for table in per_scenario:
            cands = [
                (cost, _dec_key(dec), active, dec)
                for active, (cost, dec) in table.items()
                if active <= purchased
            ]
            if not cands:
                feasible = False
                break
            cost, _, active, dec = min(cands, key=lambda t: (t[0], sorted(t[2]), t[1]))
            total += cost
            picks.append((active, dec))
        if not feasible:
            continue
        key = (
            tuple(sorted(purchased)),
            tuple(
                (tuple(sorted(active)), _dec_key(dec)) for active, dec in picks
            ),
        )
        if best is None or total < best[0] - 1e-12 or (
            abs(total - best[0]) <= 1e-12 and key < best[1]
        ):
            best = (total, key, purchased, picks)

    if best is None:
        raise InputError("oracle", "no feasible system")
    total, _, purchased, picks = best

    band = 0.0
    decisions = {"purchases": sorted(purchased), "scenarios": {}}
    for s, (active, dec) in zip(loads.scenarios, picks):
        levels = {}
        speeds = {}
        flows = {}
        for eid, name, val in dec:
            if name == "level":
                levels[eid] = float(val)
            elif name == "speed":
                speeds[eid] = float(val)
            elif name == "flow":
                flows[eid] = float(val)
        decisions["scenarios"][s.id] = {
            "active": sorted(active),
            "levels": {k: levels[k] for k in sorted(levels)},
            "speeds": {k: speeds[k] for k in sorted(speeds)},
            "flows": {k: flows[k] for k in sorted(flows)},
        }
        # a window or head bound can force rounding away from the continuous
        # optimum by a full grid step, not half of one
        step = 1.0 / (oracle.disc - 1)
        refit = {eid for eid, name, _ in dec if name == "refit"}
        for eid in sorted(active):
            comp = network.edge(eid).component
            if comp.kind not in ("heat_source", "temperature_source"):
                continue
            if comp.control.type != "continuous" or eid in refit:
                continue  # exactly solved set points carry no grid error
            rate = catalog.price(comp.energy_source) * oracle.ols * s.fraction / comp.efficiency
            if comp.kind == "heat_source":
                lo, hi = comp.heat_range
                band += rate * (hi - lo) * step
            else:
                lo, hi = comp.temp_range
                band += rate * oracle.c * flows.get(eid, 0.0) * (hi - lo) * step

    return {"cost": total, "band": band, "decisions": decisions}
