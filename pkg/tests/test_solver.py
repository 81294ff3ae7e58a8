"""Solver tests: LP correctness vs scipy, B&B vs enumeration, MPS output."""

import itertools

import numpy as np
import pytest

from thermosyn.milp import MilpModel
from thermosyn.solver import DEFAULT_GAP, export_mps, solve_lp, solve_milp

scipy_opt = pytest.importorskip("scipy.optimize")


def lp_via_scipy(model):
    """Reference LP solve of a MilpModel through scipy's HiGHS interface."""
    n = model.n_vars
    c = np.array(model.obj)
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for row, sense, rhs in zip(model.rows, model.senses, model.rhs):
        dense = np.zeros(n)
        for j, co in row:
            dense[j] = co
        if sense == "<=":
            a_ub.append(dense)
            b_ub.append(rhs)
        elif sense == ">=":
            a_ub.append(-dense)
            b_ub.append(-rhs)
        else:
            a_eq.append(dense)
            b_eq.append(rhs)
    res = scipy_opt.linprog(
        c,
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=list(zip(model.lb, model.ub)),
        method="highs",
    )
    return res


def milp_via_scipy(model):
    n = model.n_vars
    c = np.array(model.obj)
    rows_a, lo, hi = [], [], []
    for row, sense, rhs in zip(model.rows, model.senses, model.rhs):
        dense = np.zeros(n)
        for j, co in row:
            dense[j] = co
        rows_a.append(dense)
        if sense == "<=":
            lo.append(-np.inf)
            hi.append(rhs)
        elif sense == ">=":
            lo.append(rhs)
            hi.append(np.inf)
        else:
            lo.append(rhs)
            hi.append(rhs)
    constraints = (
        scipy_opt.LinearConstraint(np.array(rows_a), np.array(lo), np.array(hi))
        if rows_a
        else ()
    )
    integrality = np.array([0 if k == "continuous" else 1 for k in model.kinds])
    res = scipy_opt.milp(
        c,
        constraints=constraints,
        integrality=integrality,
        bounds=scipy_opt.Bounds(np.array(model.lb), np.array(model.ub)),
    )
    return res


def rng_lp(seed, n=8, m=6):
    """Random bounded-feasible LP; x0 interior point guarantees feasibility."""
    rng = np.random.default_rng(seed)
    model = MilpModel(f"rand{seed}")
    for j in range(n):
        model.add_var(f"x{j}", 0.0, float(rng.uniform(1.0, 5.0)), obj=float(rng.normal()))
    a = rng.normal(size=(m, n))
    x0 = np.array([0.5 * model.ub[j] for j in range(n)])
    slack = rng.uniform(0.1, 1.0, size=m)
    b = a @ x0 + slack
    for i in range(m):
        model.add_constr([(j, float(a[i, j])) for j in range(n)], "<=", float(b[i]))
    return model


class TestLp:
    def test_tiny_min(self):
        m = MilpModel()
        x = m.add_var("x", 0.0, 10.0, obj=1.0)
        m.add_constr([(x, 1.0)], ">=", 3.0)
        res = solve_lp(m)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(3.0, abs=1e-9)

    def test_infeasible(self):
        m = MilpModel()
        x = m.add_var("x", 0.0, 1.0)
        m.add_constr([(x, 1.0)], ">=", 2.0)
        assert solve_lp(m).status == "infeasible"

    def test_unbounded(self):
        m = MilpModel()
        m.add_var("x", 0.0, np.inf, obj=-1.0)
        assert solve_lp(m).status == "unbounded"

    def test_negative_lower_bounds(self):
        m = MilpModel()
        x = m.add_var("x", -4.0, 4.0, obj=1.0)
        y = m.add_var("y", -4.0, 4.0, obj=1.0)
        m.add_constr([(x, 1.0), (y, 1.0)], ">=", -5.0)
        res = solve_lp(m)
        assert res.objective == pytest.approx(-5.0, abs=1e-8)

    def test_equality_rows(self):
        m = MilpModel()
        x = m.add_var("x", 0.0, 10.0, obj=2.0)
        y = m.add_var("y", 0.0, 10.0, obj=3.0)
        m.add_constr([(x, 1.0), (y, 1.0)], "=", 4.0)
        m.add_constr([(x, 1.0), (y, -1.0)], "<=", 1.0)
        res = solve_lp(m)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(2 * 2.5 + 3 * 1.5, abs=1e-8)

    @pytest.mark.parametrize("seed", range(30))
    def test_random_lps_match_scipy(self, seed):
        model = rng_lp(seed)
        mine = solve_lp(model)
        ref = lp_via_scipy(model)
        assert ref.status == 0 and mine.status == "optimal"
        assert mine.objective == pytest.approx(ref.fun, abs=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_duality_gap_zero(self, seed):
        model = rng_lp(seed, n=6, m=5)
        res = solve_lp(model)
        # strong duality: y'b plus bound terms of nonbasic reduced costs
        y = res.duals
        d = res.reduced_costs
        dual_obj = float(y @ np.array(model.rhs))
        for j in range(model.n_vars):
            if abs(d[j]) > 1e-7:
                bound = model.lb[j] if d[j] > 0 else model.ub[j]
                dual_obj += d[j] * bound
        assert dual_obj == pytest.approx(res.objective, abs=1e-6)

    def test_duals_sign_on_binding_le_row(self):
        m = MilpModel()
        x = m.add_var("x", 0.0, 10.0, obj=-1.0)
        r = m.add_constr([(x, 1.0)], "<=", 4.0)
        res = solve_lp(m)
        assert res.objective == pytest.approx(-4.0, abs=1e-9)
        assert res.duals[r] <= 1e-9

    def test_objective_constant(self):
        m = MilpModel()
        m.objective_constant = 7.5
        x = m.add_var("x", 0.0, 1.0, obj=1.0)
        m.add_constr([(x, 1.0)], ">=", 0.5)
        res = solve_lp(m)
        assert res.objective == pytest.approx(8.0, abs=1e-9)


def enumerate_milp(model):
    """Brute force over integer assignments, LP over the continuous rest."""
    int_idx = model.integer_indices()
    best = None
    ranges = []
    for j in int_idx:
        lo = int(np.ceil(model.lb[j] - 1e-9))
        hi = int(np.floor(model.ub[j] + 1e-9))
        ranges.append(range(lo, hi + 1))
    for combo in itertools.product(*ranges):
        sub = MilpModel()
        sub.objective_constant = model.objective_constant
        for j in range(model.n_vars):
            sub.add_var(model.var_names[j], model.lb[j], model.ub[j], obj=model.obj[j])
        for j, v in zip(int_idx, combo):
            sub.set_var_bounds(j, float(v), float(v))
        for row, sense, rhs in zip(model.rows, model.senses, model.rhs):
            sub.add_constr(row, sense, rhs)
        ref = lp_via_scipy(sub)
        if ref.status == 0:
            val = ref.fun + model.objective_constant
            if best is None or val < best:
                best = val
    return best


def rng_milp(seed, n_bin=6, n_cont=3, m=5):
    rng = np.random.default_rng(seed)
    model = MilpModel(f"mip{seed}")
    for j in range(n_bin):
        model.add_var(f"b{j}", 0.0, 1.0, kind="binary", obj=float(rng.normal()))
    for j in range(n_cont):
        model.add_var(f"x{j}", 0.0, 2.0, obj=float(rng.normal()))
    n = n_bin + n_cont
    a = rng.normal(size=(m, n))
    b = rng.uniform(0.5, 3.0, size=m) + a @ np.full(n, 0.3)
    for i in range(m):
        model.add_constr([(j, float(a[i, j])) for j in range(n)], "<=", float(b[i]))
    return model


class TestBnb:
    def test_knapsack(self):
        # max 3a+2b+2c s.t. 2a+b+2c <= 3 == min of the negated objective
        m = MilpModel()
        a = m.add_var("a", 0, 1, kind="binary", obj=-3.0)
        b = m.add_var("b", 0, 1, kind="binary", obj=-2.0)
        c = m.add_var("c", 0, 1, kind="binary", obj=-2.0)
        m.add_constr([(a, 2.0), (b, 1.0), (c, 2.0)], "<=", 3.0)
        res = solve_milp(m)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(-5.0, abs=1e-9)

    def test_spec_knapsack_value(self):
        # min -x1 -3x2 s.t. x1 + 2x2 <= 2, binaries: optimum -4 at (1, 1)? no:
        # x1 + 2x2 <= 2 allows (0,1) -> -3 or (1,0) -> -1; -4 needs cap 3
        m = MilpModel()
        x1 = m.add_var("x1", 0, 1, kind="binary", obj=-1.0)
        x2 = m.add_var("x2", 0, 1, kind="binary", obj=-3.0)
        m.add_constr([(x1, 1.0), (x2, 2.0)], "<=", 3.0)
        res = solve_milp(m)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(-4.0, abs=1e-12)
        assert res.x[0] == pytest.approx(1.0) and res.x[1] == pytest.approx(1.0)
        assert res.gap <= DEFAULT_GAP

    def test_equality_infeasible_binaries(self):
        m = MilpModel()
        x1 = m.add_var("x1", 0, 1, kind="binary")
        x2 = m.add_var("x2", 0, 1, kind="binary")
        m.add_constr([(x1, 1.0), (x2, 1.0)], "=", 0.5)
        res = solve_milp(m)
        assert res.status == "infeasible"

    def test_general_integers(self):
        m = MilpModel()
        x = m.add_var("x", 0.0, 10.0, kind="integer", obj=-1.0)
        m.add_constr([(x, 2.0)], "<=", 7.0)
        res = solve_milp(m)
        assert res.objective == pytest.approx(-3.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_milps_match_enumeration(self, seed):
        model = rng_milp(seed)
        mine = solve_milp(model)
        ref = enumerate_milp(model)
        if ref is None:
            assert mine.status == "infeasible"
        else:
            assert mine.status == "optimal"
            assert mine.objective == pytest.approx(ref, abs=1e-6)

    @pytest.mark.parametrize("seed", range(8))
    def test_random_milps_match_scipy_milp(self, seed):
        model = rng_milp(seed + 100, n_bin=8, n_cont=4, m=7)
        mine = solve_milp(model)
        ref = milp_via_scipy(model)
        if ref.status == 2:
            assert mine.status == "infeasible"
        else:
            assert mine.objective == pytest.approx(ref.fun, abs=1e-6)

    def test_deterministic_repeat(self):
        model = rng_milp(3)
        r1 = solve_milp(model)
        r2 = solve_milp(model)
        assert r1.objective == r2.objective
        assert np.array_equal(r1.x, r2.x)
        assert r1.nodes == r2.nodes

    def test_node_limit_reports_time_limit_status(self):
        model = rng_milp(5, n_bin=10, m=3)
        res = solve_milp(model, max_nodes=1)
        assert res.status in ("time_limit", "optimal")
        if res.status == "time_limit":
            assert res.bound <= (res.objective if res.objective is not None else np.inf)


class TestMps:
    def test_empty_model_skeleton(self):
        m = MilpModel("empty")
        text = export_mps(m)
        assert text.splitlines() == [
            "NAME empty",
            "ROWS",
            " N OBJ",
            "COLUMNS",
            "RHS",
            "ENDATA",
        ]

    def test_sections_and_markers(self):
        m = MilpModel("demo")
        x = m.add_var("x", 0.0, 4.0, obj=1.5)
        y = m.add_var("y", 0.0, 1.0, kind="binary", obj=-1.0)
        m.add_constr([(x, 1.0), (y, 2.0)], "<=", 3.0)
        m.add_constr([(x, 1.0)], ">=", 0.5)
        text = export_mps(m)
        assert "'INTORG'" in text and "'INTEND'" in text
        assert " L r0" in text and " G r1" in text
        assert " BV BND x1" in text
        assert " UP BND x0 4" in text
        assert text.endswith("ENDATA\n")

    def test_byte_deterministic(self):
        m = rng_milp(7)
        assert export_mps(m) == export_mps(m)

    def test_roundtrip_through_scipy_values(self):
        # MPS text is exercised by an external reader in README workflows;
        # here just pin the numeric formatting
        m = MilpModel("fmt")
        m.add_var("x", 0.0, 0.1, obj=1.0 / 3.0)
        text = export_mps(m)
        assert "0.3333333333333333" in text
        assert "0.1" in text
