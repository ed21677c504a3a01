"""Built-in LP/MILP engine against hand solutions and independent oracles."""

import numpy as np
import pytest

from deroffer import simplex
from deroffer.branch_bound import solve_milp
from deroffer.linmodel import BINARY, GE, LE, EQ, LinearModel, ModelError

from oracles import enumerate_binary, tableau_simplex


def test_two_var_hand_lp():
    m = LinearModel()
    m.add_vars(2, lb=0.0, obj=1.0)
    m.add_row([0, 1], [1.0, 1.0], GE, 1.0)
    out = simplex.solve_lp(m)
    assert out.status == "optimal"
    assert out.objective == pytest.approx(1.0, abs=1e-9)


def test_unbounded_reported_as_status():
    m = LinearModel(sense="max")
    m.add_var(lb=0.0, obj=1.0)
    out = simplex.solve_lp(m)
    assert out.status == "unbounded"


def test_infeasible_reported_as_status():
    m = LinearModel()
    x = m.add_var(lb=0.0, ub=1.0, obj=1.0)
    m.add_row([x], [1.0], GE, 2.0)
    out = simplex.solve_lp(m)
    assert out.status == "infeasible"


def test_equality_rows_and_duals():
    m = LinearModel()
    m.add_vars(2, lb=0.0, obj=[1.0, 2.0])
    m.add_row([0, 1], [1.0, 1.0], EQ, 3.0)
    out = simplex.solve_lp(m)
    assert out.objective == pytest.approx(3.0)
    # shadow price of the equality is the cheaper cost
    assert out.duals[0] == pytest.approx(1.0)


def test_rejects_binary_vars():
    m = LinearModel()
    m.add_var(lb=0.0, ub=1.0, kind=BINARY)
    with pytest.raises(ModelError):
        simplex.solve_lp(m)


def _random_lp(rng, rows=20, cols=30):
    m = LinearModel()
    lb = rng.uniform(-2.0, 0.0, cols)
    ub = lb + rng.uniform(0.5, 4.0, cols)
    obj = rng.uniform(-5.0, 5.0, cols)
    for j in range(cols):
        m.add_var(lb=lb[j], ub=ub[j], obj=obj[j])
    A = rng.uniform(-3.0, 3.0, (rows, cols))
    x0 = rng.uniform(lb, ub)  # keeps the instance feasible
    senses = rng.choice([LE, GE, EQ], size=rows, p=[0.45, 0.45, 0.1])
    margin = rng.uniform(0.0, 2.0, rows)
    for i in range(rows):
        r = float(A[i] @ x0)
        if senses[i] == LE:
            m.add_row_dense(A[i], LE, r + margin[i])
        elif senses[i] == GE:
            m.add_row_dense(A[i], GE, r - margin[i])
        else:
            m.add_row_dense(A[i], EQ, r)
    return m


def test_random_lps_match_tableau_oracle():
    rng = np.random.default_rng(7)
    for _ in range(15):
        m = _random_lp(rng)
        ours = simplex.solve_lp(m)
        status, obj = tableau_simplex(m)
        assert ours.status == status == "optimal"
        assert ours.objective == pytest.approx(obj, abs=1e-8, rel=1e-8)


def test_weak_duality_and_complementary_slackness():
    rng = np.random.default_rng(11)
    for _ in range(10):
        m = _random_lp(rng, rows=12, cols=18)
        out = simplex.solve_lp(m)
        assert out.status == "optimal"
        dual_val = simplex.dual_objective(m, out.duals)
        assert dual_val <= out.objective + 1e-8 * (1 + abs(out.objective))
        # strong duality at the optimum
        assert dual_val == pytest.approx(out.objective, abs=1e-7, rel=1e-7)
        assert simplex.complementary_slackness_residual(m, out) <= 1e-6
        assert m.feasibility_residual(out.x) <= 1e-6


def test_determinism_same_model_same_outcome():
    rng = np.random.default_rng(3)
    m = _random_lp(rng)
    a = simplex.solve_lp(m)
    b = simplex.solve_lp(m)
    assert a.objective == b.objective
    assert np.array_equal(a.x, b.x)


def test_degenerate_lp_terminates():
    # classic cycling-prone instance (Beale); Bland fallback must save it
    m = LinearModel()
    m.add_vars(4, lb=0.0, obj=[-0.75, 150.0, -0.02, 6.0])
    m.add_row([0, 1, 2, 3], [0.25, -60.0, -1.0 / 25.0, 9.0], LE, 0.0)
    m.add_row([0, 1, 2, 3], [0.5, -90.0, -1.0 / 50.0, 3.0], LE, 0.0)
    m.add_row([2], [1.0], LE, 1.0)
    out = simplex.solve_lp(m)
    assert out.status == "optimal"
    assert out.objective == pytest.approx(-0.05, abs=1e-9)


def test_knapsack_milp():
    m = LinearModel(sense="max")
    a = m.add_var(lb=0, ub=1, obj=3.0, kind=BINARY)
    b = m.add_var(lb=0, ub=1, obj=2.0, kind=BINARY)
    m.add_row([a, b], [1.0, 1.0], LE, 1.0)
    out = solve_milp(m)
    assert out.status == "optimal"
    assert out.objective == pytest.approx(3.0)
    assert out.x[a] == pytest.approx(1.0)


def _random_binary_model(rng, n):
    m = LinearModel(sense=rng.choice(["min", "max"]))
    for _ in range(n):
        m.add_var(lb=0, ub=1, obj=float(rng.uniform(-4, 4)), kind=BINARY)
    for _ in range(rng.integers(1, 4)):
        coeffs = rng.uniform(-2, 2, n)
        sense = rng.choice([LE, GE])
        m.add_row_dense(coeffs, sense, float(rng.uniform(-1, 1) + coeffs.sum() / 2))
    return m


def test_binary_models_match_enumeration():
    rng = np.random.default_rng(23)
    for _ in range(12):
        n = int(rng.integers(4, 13))
        m = _random_binary_model(rng, n)
        expect, _ = enumerate_binary(m)
        out = solve_milp(m)
        if expect is None:
            assert out.status == "infeasible"
        else:
            assert out.status == "optimal"
            assert out.objective == pytest.approx(expect, abs=1e-8)


def test_bound_sequence_monotone():
    rng = np.random.default_rng(5)
    for _ in range(6):
        m = _random_binary_model(rng, 10)
        bounds = []
        out = solve_milp(m, on_node=lambda bound, inc: bounds.append(bound))
        assert out.status in ("optimal", "infeasible")
        if not bounds:
            continue
        if m.sense == "min":
            assert all(b2 >= b1 - 1e-9 for b1, b2 in zip(bounds, bounds[1:]))
        else:
            assert all(b2 <= b1 + 1e-9 for b1, b2 in zip(bounds, bounds[1:]))
        if out.status == "optimal":
            if m.sense == "min":
                assert all(b <= out.objective + 1e-8 for b in bounds)
            else:
                assert all(b >= out.objective - 1e-8 for b in bounds)


def test_node_limit_returns_iteration_limit_status():
    rng = np.random.default_rng(9)
    m = _random_binary_model(rng, 12)
    out = solve_milp(m, node_limit=1)
    assert out.status in ("iteration-limit", "optimal", "infeasible")
    # with a single node no branching can finish on a fractional relaxation
    if out.status == "iteration-limit":
        assert out.bound is not None


def test_lp_dump_round_trip_text():
    m = LinearModel()
    x = m.add_var(lb=0.0, ub=2.0, obj=1.5, name="alpha")
    m.add_row([x], [1.0], GE, 0.5, name="floor")
    text = m.dump_lp()
    assert "Minimize" in text and "alpha" in text and "floor" in text and "End" in text
