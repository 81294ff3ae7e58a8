"""LP and MILP solving over the MilpModel IR, plus MPS export.

The LP path is a two-phase bounded-variable primal simplex: slack columns
turn every row into an equality, a crash start puts slacks in the basis, and
artificial columns absorb whatever residual the slack bounds cannot.  Branch
and bound explores best-bound-first with plunging; child nodes re-solve via
the dual simplex from the parent basis, falling back to a cold two-phase
solve when that stalls.  Heap nodes store only the basis and a packed
at-upper-bound bitmask, so memory stays flat on deep trees.

All tolerances live here: FEAS_TOL for bound and row feasibility, INT_TOL
for integrality, DEFAULT_GAP for the relative incumbent/bound gap
(incumbent - bound) / max(1, |incumbent|).
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .kernels import (
    REFRESH_EVERY,
    STATUS_ITER_LIMIT,
    STATUS_NUMERICAL,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
)
from .milp import MilpModel

FEAS_TOL = 1e-7
INT_TOL = 1e-6
DEFAULT_GAP = 1e-6
OPT_TOL = 1e-8

INF = float("inf")

_INFEASIBLE = 4  # internal status marker beyond the kernel codes


@dataclass
class LpResult:
    """Continuous relaxation outcome.

    duals has one entry per model row (for a <= row at optimality of a
    minimization the sign is <= 0); reduced_costs one entry per structural
    variable.  Both are None unless status is "optimal".
    """

    status: str  # "optimal" | "infeasible" | "unbounded" | "failed"
    objective: Optional[float] = None
    x: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0


@dataclass
class BnbResult:
    """Branch-and-bound outcome with the final bound/gap bookkeeping."""

    status: str  # "optimal" | "infeasible" | "time_limit"
    objective: Optional[float] = None
    x: Optional[np.ndarray] = None
    bound: float = -INF
    gap: float = INF
    nodes: int = 0
    iterations: int = 0


class _Work:
    """Sparse standardized arrays shared by every node of one solve.

    Column layout: [0, n) structural, [n, n+m) slacks, [n+m, n+2m)
    artificials.  A x = b throughout; senses are encoded in slack bounds
    (<=: slack in [0, inf), >=: (-inf, 0], =: fixed 0).  The store is CSR by
    column: vals[indptr[j]:indptr[j+1]] lie in rows cols[...].
    """

    def __init__(self, model: MilpModel, backend: Optional[str]):
        self.model = model
        n, m = model.n_vars, model.n_constrs
        self.n = n
        self.m = m
        total = n + 2 * m
        self.total = total
        per_col: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
        for i, row in enumerate(model.rows):
            for j, co in row:
                per_col[j].append((i, co))
        indptr = np.zeros(total + 1, dtype=np.int64)
        cols_l: List[int] = []
        vals_l: List[float] = []
        for j in range(n):
            for i, co in per_col[j]:
                cols_l.append(i)
                vals_l.append(co)
            indptr[j + 1] = len(cols_l)
        self.art_entry = np.zeros(m, dtype=np.int64)
        for i in range(m):  # slack columns
            cols_l.append(i)
            vals_l.append(1.0)
            indptr[n + i + 1] = len(cols_l)
        for i in range(m):  # artificial columns; sign set at crash time
            self.art_entry[i] = len(cols_l)
            cols_l.append(i)
            vals_l.append(1.0)
            indptr[n + m + i + 1] = len(cols_l)
        self.indptr = indptr
        self.cols = np.array(cols_l, dtype=np.int64)
        self.vals = np.array(vals_l, dtype=np.float64)
        self.varids = np.repeat(
            np.arange(total, dtype=np.int64), np.diff(indptr)
        )
        self.b = np.array(model.rhs, dtype=float) if m else np.zeros(0)
        self.c = np.zeros(total)
        self.c[:n] = model.obj
        self.base_lb = np.empty(total)
        self.base_ub = np.empty(total)
        self.base_lb[:n] = model.lb
        self.base_ub[:n] = model.ub
        for i, sense in enumerate(model.senses):
            if sense == "<=":
                self.base_lb[n + i], self.base_ub[n + i] = 0.0, INF
            elif sense == ">=":
                self.base_lb[n + i], self.base_ub[n + i] = -INF, 0.0
            else:
                self.base_lb[n + i], self.base_ub[n + i] = 0.0, 0.0
        self.base_lb[n + m:] = 0.0
        self.base_ub[n + m:] = 0.0  # opened only during phase 1
        self.lb = self.base_lb.copy()
        self.ub = self.base_ub.copy()
        self.primal, self.dual = kernels.get_kernels(backend)
        self.max_iter = 20000 + 20 * (total + m)
        # basis inverse carried across kernel calls; valid iff binv_basis
        # matches the incoming basis and binv_age stays under the refresh
        # cadence (eta updates drift, so stale inverses get refactored)
        self.binv = np.zeros((m, m))
        self.binv_basis: Optional[np.ndarray] = None
        self.binv_age = 0

    def reset_bounds(self, changes: Dict[int, Tuple[float, float]]):
        self.lb[: self.n] = self.base_lb[: self.n]
        self.ub[: self.n] = self.base_ub[: self.n]
        for j, (lo, hi) in changes.items():
            self.lb[j] = lo
            self.ub[j] = hi

    def _crash_point(self) -> np.ndarray:
        x = np.zeros(self.total)
        for j in range(self.n):
            lo, hi = self.lb[j], self.ub[j]
            if lo > -INF and (abs(lo) <= abs(hi) or hi == INF):
                x[j] = lo
            elif hi < INF:
                x[j] = hi
            else:
                x[j] = 0.0
        return x

    def _run(self, core, c, basis, x):
        ok = (
            self.binv_basis is not None
            and self.binv_age < REFRESH_EVERY
            and np.array_equal(basis, self.binv_basis)
        )
        st, iters = core(
            self.indptr, self.cols, self.vals, self.varids, self.b, c,
            self.lb, self.ub, basis, x, self.binv, ok,
            FEAS_TOL, OPT_TOL, self.max_iter,
        )
        iters = int(iters)
        # on exit binv matches the final basis; age only survives reuse
        self.binv_basis = basis.copy()
        self.binv_age = (self.binv_age if ok else 0) + iters
        return st, iters

    def cold_solve(self) -> Tuple[int, np.ndarray, np.ndarray, int]:
        """Two-phase solve from a slack crash basis.

        Returns (status, basis, x, iterations); status uses kernel codes
        plus the infeasible marker.
        """
        n, m = self.n, self.m
        if m == 0:
            x = self._crash_point()
            for j in range(n):
                if self.c[j] > 0 and self.lb[j] == -INF:
                    return STATUS_UNBOUNDED, np.zeros(0, np.int64), x, 0
                if self.c[j] < 0 and self.ub[j] == INF:
                    return STATUS_UNBOUNDED, np.zeros(0, np.int64), x, 0
                x[j] = self.lb[j] if self.c[j] >= 0 else self.ub[j]
                if not np.isfinite(x[j]):
                    x[j] = 0.0
            return STATUS_OPTIMAL, np.zeros(0, np.int64), x, 0
        self.ub[n + m:] = 0.0
        x = self._crash_point()
        xw = x[self.varids[: self.indptr[n]]]
        resid = self.b - np.bincount(
            self.cols[: self.indptr[n]],
            weights=self.vals[: self.indptr[n]] * xw,
            minlength=m,
        )
        basis = np.empty(m, dtype=np.int64)
        need_phase1 = False
        c1 = np.zeros(self.total)
        self.binv[:] = 0.0  # crash basis is diagonal: unit slack/artificial cols
        for i in range(m):
            lo_s, hi_s = self.lb[n + i], self.ub[n + i]
            r = resid[i]
            if lo_s - FEAS_TOL <= r <= hi_s + FEAS_TOL:
                basis[i] = n + i
                x[n + i] = min(max(r, lo_s), hi_s)
                self.binv[i, i] = 1.0
            else:
                s_val = min(max(r, lo_s), hi_s)
                x[n + i] = s_val
                left = r - s_val
                art = n + m + i
                sign = 1.0 if left >= 0 else -1.0
                self.vals[self.art_entry[i]] = sign
                self.ub[art] = INF
                x[art] = abs(left)
                basis[i] = art
                c1[art] = 1.0
                need_phase1 = True
                self.binv[i, i] = sign
        self.binv_basis = basis.copy()
        self.binv_age = 0
        iters = 0
        if need_phase1:
            st, it1 = self._run(self.primal, c1, basis, x)
            iters += int(it1)
            if st != STATUS_OPTIMAL:
                return STATUS_NUMERICAL, basis, x, iters
            if float(c1 @ x) > 1e-6:
                self.ub[n + m:] = 0.0
                return _INFEASIBLE, basis, x, iters
            self.ub[n + m:] = 0.0
            np.clip(x[n + m:], 0.0, 0.0, out=x[n + m:])
        st, it2 = self._run(self.primal, self.c, basis, x)
        iters += int(it2)
        return st, basis, x, iters

    def warm_solve(
        self, basis: np.ndarray, x: np.ndarray
    ) -> Tuple[int, np.ndarray, np.ndarray, int]:
        """Dual re-solve after bound changes, primal polish, cold fallback."""
        if self.m == 0:
            return self.cold_solve()
        self.ub[self.n + self.m:] = 0.0
        basis = basis.copy()
        x = x.copy()
        st, it1 = self._run(self.dual, self.c, basis, x)
        it1 = int(it1)
        if st == STATUS_UNBOUNDED:
            return _INFEASIBLE, basis, x, it1
        if st != STATUS_OPTIMAL:
            st, basis, x, it2 = self.cold_solve()
            return st, basis, x, it1 + it2
        st, it2 = self._run(self.primal, self.c, basis, x)
        it2 = int(it2)
        if st != STATUS_OPTIMAL:
            st, basis, x, it3 = self.cold_solve()
            return st, basis, x, it1 + it2 + it3
        return st, basis, x, it1 + it2

    def duals_and_reduced(self, basis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.m == 0:
            return np.zeros(0), self.c[: self.n].copy()
        m = self.m
        if (
            self.binv_basis is not None
            and self.binv_age < REFRESH_EVERY
            and np.array_equal(basis, self.binv_basis)
        ):
            B_inv = self.binv
        else:
            B = np.zeros((m, m))
            for i in range(m):
                j = basis[i]
                sl = slice(self.indptr[j], self.indptr[j + 1])
                B[self.cols[sl], i] = self.vals[sl]
            B_inv = np.linalg.inv(B)
        y = self.c[basis] @ B_inv
        contrib = np.bincount(
            self.varids, weights=self.vals * y[self.cols], minlength=self.total
        )
        d = self.c - contrib
        return y, d[: self.n]

    def snapshot_bits(self, x: np.ndarray) -> np.ndarray:
        return np.packbits(x >= self.ub - 1e-9)

    def restore_x(self, bits: np.ndarray) -> np.ndarray:
        at_ub = np.unpackbits(bits, count=self.total).astype(bool)
        x = np.where(np.isfinite(self.base_lb), self.base_lb, 0.0)
        hi_ok = at_ub & np.isfinite(self.base_ub)
        x[hi_ok] = self.base_ub[hi_ok]
        return x


def _status_name(code: int) -> str:
    return {
        STATUS_OPTIMAL: "optimal",
        STATUS_UNBOUNDED: "unbounded",
        _INFEASIBLE: "infeasible",
    }.get(code, "failed")


def solve_lp(model: MilpModel, *, backend: Optional[str] = None) -> LpResult:
    """Solve the continuous relaxation of the model (integrality dropped)."""
    work = _Work(model, backend)
    st, basis, x, iters = work.cold_solve()
    name = _status_name(st)
    if name != "optimal":
        return LpResult(status=name, iterations=iters)
    y, d = work.duals_and_reduced(basis)
    xs = x[: model.n_vars].copy()
    return LpResult(
        status="optimal",
        objective=model.objective_value(xs),
        x=xs,
        duals=y,
        reduced_costs=d,
        iterations=iters,
    )


def _pick_branch_var(
    x: np.ndarray, int_groups: Sequence[Sequence[int]]
) -> Tuple[int, float]:
    """Most-fractional variable in the lowest priority class that has one."""
    for group in int_groups:
        best_j, best_score, best_val = -1, INT_TOL, 0.0
        for j in group:
            v = x[j]
            frac = v - np.floor(v)
            score = min(frac, 1.0 - frac)
            if score > best_score + 1e-15:
                best_score = score
                best_j = j
                best_val = v
        if best_j >= 0:
            return best_j, best_val
    return -1, 0.0


HEUR_EVERY = 150  # nodes between rounding-heuristic attempts


def solve_milp(
    model: MilpModel,
    *,
    gap: float = DEFAULT_GAP,
    time_limit: Optional[float] = None,
    backend: Optional[str] = None,
    max_nodes: Optional[int] = None,
    branch_priority: Optional[Dict[int, int]] = None,
    incumbent_hint=None,
) -> BnbResult:
    """Best-bound branch and bound with most-fractional branching.

    branch_priority maps variable index to a class; lower classes branch
    first (default 0).  Children dive first on the side nearest the
    fractional value; the other side is heaped keyed by the parent bound, so
    exploration order and the reported solution are deterministic for a
    fixed model.

    incumbent_hint, when given (or carried by the model as attributes set at
    assembly time, the default), maps a relaxation point to candidate
    (fix, refines) pairs: fix is a partial integer assignment tried with one
    LP, and each refine callback maps the latest solution to fallback
    extension dicts, tried in order until one keeps the trial feasible.  The
    first candidate whose solves stay feasible and land integral becomes the
    incumbent.
    """
    t0 = time.monotonic()
    work = _Work(model, backend)
    int_idx = model.integer_indices()
    if branch_priority is None:
        branch_priority = getattr(model, "branch_priority", None)
    if incumbent_hint is None:
        incumbent_hint = getattr(model, "incumbent_hint", None)
    if branch_priority:
        classes = sorted({branch_priority.get(j, 0) for j in int_idx})
        int_groups = [
            [j for j in int_idx if branch_priority.get(j, 0) == cl] for cl in classes
        ]
    else:
        int_groups = [int_idx]
    st, basis, x, iters = work.cold_solve()
    total_iters = iters
    if st == _INFEASIBLE:
        return BnbResult(status="infeasible", nodes=1, iterations=total_iters)
    if st == STATUS_UNBOUNDED:
        raise RuntimeError("relaxation is unbounded; synthesis models never are")
    if st != STATUS_OPTIMAL:
        return BnbResult(status="infeasible", nodes=1, iterations=total_iters)

    inc_obj = INF
    inc_x: Optional[np.ndarray] = None
    counter = 0
    # heap rows: (parent bound, tiebreak, bound changes, basis, packed bits)
    heap: List[Tuple[float, int, Dict[int, Tuple[float, float]], np.ndarray, np.ndarray]] = []
    nodes = 0
    current: Optional[Tuple[Dict[int, Tuple[float, float]], np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]] = (
        {}, basis, x, None,
    )
    timed_out = False

    while True:
        if current is None:
            if not heap:
                break
            bound0, _, changes, pbasis, pbits = heapq.heappop(heap)
            if inc_obj < INF and bound0 >= inc_obj - gap * max(1.0, abs(inc_obj)) - 1e-12:
                continue  # dominated while waiting in the heap
            current = (changes, pbasis, None, pbits)
        changes, pbasis, px, pbits = current
        current = None
        if time_limit is not None and time.monotonic() - t0 > time_limit:
            timed_out = True
            break
        if max_nodes is not None and nodes >= max_nodes:
            timed_out = True
            break
        nodes += 1
        work.reset_bounds(changes)
        if px is not None:
            if nodes == 1:
                st, nbasis, nx = STATUS_OPTIMAL, pbasis, px
                it = 0
            else:
                st, nbasis, nx, it = work.warm_solve(pbasis, px)
        else:
            st, nbasis, nx, it = work.warm_solve(pbasis, work.restore_x(pbits))
        total_iters += int(it)
        if st != STATUS_OPTIMAL:
            continue  # infeasible or numerically lost node
        obj = float(work.c[: work.n] @ nx[: work.n]) + model.objective_constant
        if inc_obj < INF and obj >= inc_obj - gap * max(1.0, abs(inc_obj)) - 1e-12:
            continue
        # rounding attempts are worth many LPs while no incumbent exists but
        # only occasional refreshes once one does
        heur_gap = HEUR_EVERY if inc_obj >= INF else 8 * HEUR_EVERY
        if incumbent_hint is not None and (nodes == 1 or nodes % heur_gap == 0):
            for fix, refines in incumbent_hint(nx):
                work.reset_bounds({j2: (v2, v2) for j2, v2 in fix.items()})
                hst, hb, hx, hit = work.warm_solve(nbasis, nx)
                total_iters += int(hit)
                if hst != STATUS_OPTIMAL:
                    continue
                fix = dict(fix)
                for refine in refines:
                    # a refinement offers fallback combinations; the first
                    # one that keeps the trial feasible wins
                    hst = _INFEASIBLE
                    for upd in refine(hx):
                        trial = dict(fix)
                        trial.update(upd)
                        work.reset_bounds({j2: (v2, v2) for j2, v2 in trial.items()})
                        tst, tb, tx, hit = work.warm_solve(hb, hx)
                        total_iters += int(hit)
                        if tst == STATUS_OPTIMAL:
                            fix, hst, hb, hx = trial, tst, tb, tx
                            break
                    if hst != STATUS_OPTIMAL:
                        break
                if hst != STATUS_OPTIMAL or _pick_branch_var(hx, int_groups)[0] >= 0:
                    continue
                hobj = float(work.c[: work.n] @ hx[: work.n]) + model.objective_constant
                if hobj < inc_obj - 1e-12:
                    inc_obj = hobj
                    hxs = hx[: work.n].copy()
                    for k in int_idx:
                        hxs[k] = round(hxs[k])
                    inc_x = hxs
                break
            work.reset_bounds(changes)
            if obj >= inc_obj - gap * max(1.0, abs(inc_obj)) - 1e-12:
                continue  # this node is now dominated by its own rounding
        j, v = _pick_branch_var(nx, int_groups)
        if j < 0:
            xs = nx[: work.n].copy()
            for k in int_idx:
                xs[k] = round(xs[k])
            if obj < inc_obj - 1e-12:
                inc_obj = obj
                inc_x = xs
            continue
        lo = float(np.floor(v))
        hi = lo + 1.0
        cur_lo = changes[j][0] if j in changes else work.base_lb[j]
        cur_hi = changes[j][1] if j in changes else work.base_ub[j]
        down = dict(changes)
        down[j] = (cur_lo, min(lo, cur_hi))
        up = dict(changes)
        up[j] = (max(hi, cur_lo), cur_hi)
        frac = v - lo
        dive, other = (down, up) if frac < 0.5 else (up, down)
        bits = work.snapshot_bits(nx)
        if other[j][0] <= other[j][1] + 1e-12:
            counter += 1
            heapq.heappush(heap, (obj, counter, other, nbasis.copy(), bits))
        if dive[j][0] <= dive[j][1] + 1e-12:
            current = (dive, nbasis, nx, None)

    bound = min(heap[0][0] if heap else INF, inc_obj)
    if inc_obj < INF:
        g = max(0.0, (inc_obj - bound) / max(1.0, abs(inc_obj)))
        status = "time_limit" if timed_out else "optimal"
        return BnbResult(
            status=status, objective=inc_obj, x=inc_x, bound=bound,
            gap=g, nodes=nodes, iterations=total_iters,
        )
    if timed_out:
        return BnbResult(status="time_limit", bound=bound, nodes=nodes, iterations=total_iters)
    return BnbResult(status="infeasible", nodes=nodes, iterations=total_iters)


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def export_mps(model: MilpModel) -> str:
    """Free-format MPS text for the model; byte-stable for a fixed model.

    Columns are named x{j} and rows r{i} since model-internal names may
    contain characters MPS readers reject.  The objective constant, when
    present, is carried as an RHS entry on the objective row with flipped
    sign, which is the convention most readers apply.
    """
    lines = [f"NAME {model.name}", "ROWS", " N OBJ"]
    sense_code = {"<=": "L", ">=": "G", "=": "E"}
    for i, s in enumerate(model.senses):
        lines.append(f" {sense_code[s]} r{i}")
    lines.append("COLUMNS")
    by_var: List[List[Tuple[str, float]]] = [[] for _ in range(model.n_vars)]
    for i, row in enumerate(model.rows):
        for j, co in row:
            by_var[j].append((f"r{i}", co))
    in_int = False
    marker = 0
    for j in range(model.n_vars):
        want_int = model.kinds[j] != "continuous"
        if want_int and not in_int:
            lines.append(f" MARKER{marker} 'MARKER' 'INTORG'")
            marker += 1
            in_int = True
        elif not want_int and in_int:
            lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")
            marker += 1
            in_int = False
        entries = [("OBJ", model.obj[j])] if model.obj[j] != 0.0 else []
        entries.extend(by_var[j])
        if not entries:
            entries = [("OBJ", 0.0)]  # keep every column declared
        for rname, co in entries:
            lines.append(f" x{j} {rname} {_fmt(co)}")
    if in_int:
        lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")
    lines.append("RHS")
    for i, r in enumerate(model.rhs):
        if r != 0.0:
            lines.append(f" RHS r{i} {_fmt(r)}")
    if model.objective_constant != 0.0:
        lines.append(f" RHS OBJ {_fmt(-model.objective_constant)}")
    bound_lines: List[str] = []
    for j in range(model.n_vars):
        lo, hi = model.lb[j], model.ub[j]
        if model.kinds[j] == "binary" and lo == 0.0 and hi == 1.0:
            bound_lines.append(f" BV BND x{j}")
            continue
        if lo == hi:
            bound_lines.append(f" FX BND x{j} {_fmt(lo)}")
            continue
        if lo == -INF and hi == INF:
            bound_lines.append(f" FR BND x{j}")
            continue
        if lo == -INF:
            bound_lines.append(f" MI BND x{j}")
        elif lo != 0.0 or model.kinds[j] != "continuous":
            bound_lines.append(f" LO BND x{j} {_fmt(lo)}")
        if hi != INF:
            bound_lines.append(f" UP BND x{j} {_fmt(hi)}")
    if bound_lines:
        lines.append("BOUNDS")
        lines.extend(bound_lines)
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"
