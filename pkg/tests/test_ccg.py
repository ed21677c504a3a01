"""Classical CCG: master bounds, subproblem exactness, convergence."""

import dataclasses

import numpy as np
import pytest

from deroffer import backends
from deroffer.ccg import (
    ccg_solve,
    dualized_subproblem_milp,
    exact_subproblem,
    monolithic_solve,
    solve_master,
)
from deroffer.compact import recourse_lp, scenario_compacts
from deroffer.uncertainty import BudgetedUncertaintySet, PriceScenarioSet

from testutils import fixed_scenarios, small_instance


@pytest.fixture(scope="module")
def case():
    inst = small_instance(T=3, gamma=1)
    scen = fixed_scenarios(T=3, count=2)
    return inst, scen, scenario_compacts(inst, scen)


class TestMaster:
    def test_gamma0_master_collapses_to_nominal(self):
        inst = small_instance(T=3, gamma=0)
        scen = fixed_scenarios(T=3, count=2)
        compacts = scenario_compacts(inst, scen)
        state = ccg_solve(inst, scen, tol=1e-8)
        assert state.converged and state.iteration <= 2
        x, eta = solve_master(compacts, [inst.uncertainty.xi_bar])
        assert state.objective == pytest.approx(eta, abs=1e-7)

    def test_redundant_point_changes_nothing(self, case):
        inst, scen, compacts = case
        pts = [inst.uncertainty.xi_bar]
        x1, eta1 = solve_master(compacts, pts)
        x2, eta2 = solve_master(compacts, pts + [pts[0].copy()])
        assert eta2 == pytest.approx(eta1, abs=1e-8)

    def test_master_eta_is_lower_bound(self, case):
        inst, scen, compacts = case
        mono_x, mono_obj = monolithic_solve(inst, scen)
        _, eta = solve_master(compacts, [inst.uncertainty.xi_bar])
        assert eta <= mono_obj + 1e-8

    def test_single_hour_sells_full_megawatt(self):
        from test_compact import tiny_instance

        inst = tiny_instance(grid=((10.0,),), q_max=[1.0], pv=[1.0])
        u = BudgetedUncertaintySet(inst.pv_forecast, 0.0 * inst.pv_forecast, gamma=0)
        inst = inst.with_uncertainty(u)
        scen = PriceScenarioSet(trajectories=np.array([[30.0]]), weights=np.array([1.0]))
        state = ccg_solve(inst, scen, tol=1e-8)
        assert state.converged
        assert state.incumbent_x[0] == pytest.approx(1.0, abs=1e-8)
        assert state.objective == pytest.approx(-30.0, abs=1e-7)


class TestSubproblem:
    def test_gamma0_returns_nominal(self, case):
        inst, scen, compacts = case
        u0 = dataclasses.replace(inst.uncertainty, gamma=0)
        x = np.full(compacts[0].n, 0.4)
        xi, val = exact_subproblem(compacts, x, u0)
        assert np.allclose(xi, u0.xi_bar)
        expect = sum(
            c.weight * recourse_lp(c, x, u0.xi_bar).objective for c in compacts
        )
        assert val == pytest.approx(expect, abs=1e-9)

    def test_worst_case_saturates_budget(self, case):
        inst, scen, compacts = case
        x = np.full(compacts[0].n, 0.8)
        xi, _ = exact_subproblem(compacts, x, inst.uncertainty)
        z = (inst.uncertainty.xi_bar - xi) / np.where(
            inst.uncertainty.xi_hat > 0, inst.uncertainty.xi_hat, 1.0
        )
        assert z.sum() == pytest.approx(inst.uncertainty.gamma)

    def test_dual_form_recomputation_matches(self, case):
        inst, scen, compacts = case
        x = np.full(compacts[0].n, 0.5)
        xi_star, q_val = exact_subproblem(compacts, x, inst.uncertainty)
        dual_total = 0.0
        for c in compacts:
            sol = recourse_lp(c, x, xi_star)
            dual_total += c.weight * float(
                sol.dual @ (c.g - c.E @ x) + sol.dual @ (c.H @ xi_star)
            )
        assert dual_total == pytest.approx(q_val, abs=1e-6, rel=1e-6)

    def test_dualized_milp_matches_enumeration_on_grid(self, case):
        inst, scen, compacts = case
        rng = np.random.default_rng(21)
        for _ in range(10):
            x = rng.uniform(0.0, 1.2, compacts[0].n)
            _, v_enum = exact_subproblem(compacts, x, inst.uncertainty)
            _, v_milp = dualized_subproblem_milp(compacts, x, inst.uncertainty)
            assert v_milp == pytest.approx(v_enum, abs=1e-5, rel=1e-5)

    def test_undersized_big_m_is_detected_by_oracle_mismatch(self, case):
        inst, scen, compacts = case
        x = np.full(compacts[0].n, 1.0)
        _, v_enum = exact_subproblem(compacts, x, inst.uncertainty)
        _, v_bad = dualized_subproblem_milp(
            compacts, x, inst.uncertainty, big_m_scale=0.02
        )
        assert v_bad < v_enum - 1e-6


class TestLoop:
    def test_converges_to_monolithic_optimum(self, case):
        inst, scen, _ = case
        state = ccg_solve(inst, scen, tol=1e-8)
        assert state.converged
        _, mono_obj = monolithic_solve(inst, scen)
        rel = abs(state.objective - mono_obj) / (1 + abs(mono_obj))
        assert rel <= 1e-6

    def test_bound_logs_monotone(self, case):
        inst, scen, _ = case
        state = ccg_solve(inst, scen, tol=1e-8)
        lbs = [r.lower_bound for r in state.log]
        ubs = [r.upper_bound for r in state.log]
        assert all(b2 >= b1 - 1e-9 for b1, b2 in zip(lbs, lbs[1:]))
        assert all(b2 <= b1 + 1e-9 for b1, b2 in zip(ubs, ubs[1:]))
        assert all(lb <= ub + 1e-7 for lb, ub in zip(lbs, ubs))

    def test_iteration_count_bounded_by_vertices(self, case):
        inst, scen, _ = case
        state = ccg_solve(inst, scen, tol=1e-8)
        n_vertices = inst.uncertainty.vertex_count()
        assert state.iteration <= n_vertices + 1
        keys = {tuple(np.round(p, 9)) for p in state.active_points}
        assert len(keys) == len(state.active_points)

    def test_log_csv_written(self, case, tmp_path):
        inst, scen, _ = case
        path = tmp_path / "log.csv"
        ccg_solve(inst, scen, tol=1e-6, log_path=path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "k,LB,UB,gap,master_time,sub_time"
        assert len(lines) >= 2

    def test_recording_backend_sees_all_solves(self, case):
        inst, scen, _ = case

        class Recording(backends.Backend):
            def __init__(self, inner):
                self.inner = inner
                self.lp_calls = 0
                self.milp_calls = 0

            def solve(self, model, gap_tol=1e-6):
                if model.num_binary:
                    self.milp_calls += 1
                else:
                    self.lp_calls += 1
                return self.inner.solve(model, gap_tol)

        rec = Recording(backends.default_backend())
        state = ccg_solve(inst, scen, tol=1e-6, backend=rec)
        assert state.converged
        assert rec.lp_calls > 0 and rec.milp_calls == 0
