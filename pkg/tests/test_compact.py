"""Core-model lowering: revenue coefficients, compact matrices, recourse LP."""

import dataclasses
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deroffer.compact import (
    build_compact,
    cleared_revenue_coeffs,
    deviation_weights,
    expected_recourse_value,
    recourse_lp,
)
from deroffer.instance import (
    Battery,
    FeederNetwork,
    InstanceError,
    Line,
    OfferInstance,
    load_instance,
    save_instance,
)
from deroffer.uncertainty import BudgetedUncertaintySet


def tiny_instance(
    T=1,
    grid=((10.0, 20.0, 30.0),),
    q_max=(2.0,),
    pv=(1.0,),
    load=(0.0,),
    battery=None,
    penalty=100.0,
    adder=0.0,
):
    grids = tuple(np.asarray(g) for g in grid) if len(grid) == T else tuple(
        np.asarray(grid[0]) for _ in range(T)
    )
    net = FeederNetwork(
        bus_count=2,
        lines=(Line(parent=0, child=1, resistance=0.01, reactance=0.02, flow_limit=50.0),),
        v_min=0.90,
        v_max=1.10,
        pv_bus=1,
        battery_bus=1,
        load_fraction=np.array([0.0, 1.0]),
    )
    return OfferInstance(
        horizon=T,
        price_grid=grids,
        q_max=np.asarray(q_max, dtype=float),
        pv_forecast=np.asarray(pv, dtype=float),
        battery=battery or Battery.none(),
        load=np.asarray(load, dtype=float),
        network=net,
        penalty_price=penalty,
        rt_price_adder=adder,
    )


class TestClearedRevenue:
    def test_block_clearing_definition(self):
        inst = tiny_instance()
        c = cleared_revenue_coeffs(inst, [20.0])
        assert np.allclose(c, [-20.0, -20.0, 0.0])
        x = np.array([1.0, 1.0, 1.0])
        assert -(c @ x) == pytest.approx(40.0)

    def test_price_below_grid_clears_nothing(self):
        inst = tiny_instance()
        c = cleared_revenue_coeffs(inst, [5.0])
        assert np.allclose(c, 0.0)

    def test_random_grids_match_per_block_recomputation(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            T = int(rng.integers(1, 5))
            grids = tuple(np.sort(rng.uniform(5, 60, rng.integers(1, 5))) for _ in range(T))
            grids = tuple(g + np.arange(g.size) * 1e-6 for g in grids)  # strictness
            inst = tiny_instance(
                T=T, grid=grids, q_max=[2.0] * T, pv=[1.0] * T, load=[0.0] * T
            )
            lam = rng.uniform(0, 70, T)
            c = cleared_revenue_coeffs(inst, lam)
            j = 0
            for t, g in enumerate(grids):
                for k in range(g.size):
                    expect = -lam[t] if g[k] <= lam[t] else 0.0
                    assert c[j] == expect
                    j += 1

    def test_length_mismatch_rejected(self):
        with pytest.raises(InstanceError):
            cleared_revenue_coeffs(tiny_instance(), [20.0, 30.0])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), bump=st.floats(0.0, 30.0))
    def test_revenue_monotone_in_price(self, seed, bump):
        rng = np.random.default_rng(seed)
        inst = tiny_instance(T=2, grid=((10.0, 20.0), (15.0, 25.0)), q_max=[2, 2],
                             pv=[1, 1], load=[0, 0])
        lam = rng.uniform(0, 40, 2)
        x = rng.uniform(0, 1, 4)
        t = int(rng.integers(0, 2))
        lam2 = lam.copy()
        lam2[t] += bump
        rev1 = -(cleared_revenue_coeffs(inst, lam) @ x)
        rev2 = -(cleared_revenue_coeffs(inst, lam2) @ x)
        assert rev2 >= rev1 - 1e-12


class TestBuildCompact:
    def test_dimensions_bookkeeping(self):
        bat = Battery(power_limit=1.0, energy_limit=2.0, efficiency=0.9, initial_energy=1.0)
        inst = tiny_instance(T=3, grid=((10.0, 20.0),), q_max=[2] * 3, pv=[1] * 3,
                             load=[0.5] * 3, battery=bat)
        comp = build_compact(inst, [15.0, 25.0, 18.0])
        T = 3
        assert comp.n == 6 and comp.p == T and comp.m == 6 * T
        coupled_lines = 1  # single line feeds both devices
        coupled_buses = 1
        expected_rows = 14 * T + 2 * T * (coupled_lines + coupled_buses)
        assert comp.F.shape == (expected_rows, comp.m)
        assert comp.H.shape == (expected_rows, T)
        assert comp.E.shape == (expected_rows, comp.n)
        assert comp.A.shape == (comp.n + T, comp.n)

    def test_zero_penalty_zero_load_recourse_is_free(self):
        inst = tiny_instance(penalty=0.0)
        comp = build_compact(inst, [25.0])
        assert np.allclose(comp.b, 0.0)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.uniform(0, 2.0 / 3, 3)
            xi = rng.uniform(0, 1.0, 1)
            assert recourse_lp(comp, x, xi).objective == pytest.approx(0.0, abs=1e-9)

    def test_single_hour_sell_everything_at_nominal(self):
        # one block priced below lambda; commitment 1 MW is deliverable at xi_bar
        inst = tiny_instance(grid=((10.0,),), q_max=[1.0], pv=[1.0])
        comp = build_compact(inst, [30.0])
        sol = recourse_lp(comp, np.array([1.0]), np.array([1.0]))
        assert sol.objective == pytest.approx(0.0, abs=1e-9)
        assert comp.first_stage_cost(np.array([1.0])) == pytest.approx(-30.0)

    def test_shortfall_priced_at_penalty(self):
        # committed 1 MW, xi forces zero PV: one hour of shortfall at $100/MWh
        inst = tiny_instance(grid=((10.0,),), q_max=[1.0], pv=[1.0], penalty=100.0)
        comp = build_compact(inst, [30.0])
        sol = recourse_lp(comp, np.array([1.0]), np.array([0.0]))
        assert sol.objective == pytest.approx(100.0, abs=1e-7)

    def test_scaling_costs_scales_objective_only(self):
        inst = tiny_instance(grid=((10.0,),), q_max=[1.0], pv=[1.0])
        comp = build_compact(inst, [30.0])
        comp2 = dataclasses.replace(comp, b=2.0 * comp.b)
        a = recourse_lp(comp, np.array([1.0]), np.array([0.25]))
        bsol = recourse_lp(comp2, np.array([1.0]), np.array([0.25]))
        assert bsol.objective == pytest.approx(2 * a.objective, rel=1e-9)
        assert np.allclose(a.y, bsol.y, atol=1e-8)

    def test_deviation_weights_follow_rt_price(self):
        inst = tiny_instance(T=2, grid=((10.0,), (10.0,)), q_max=[1, 1], pv=[1, 1],
                             load=[0, 0], adder=0.1)
        w = deviation_weights(inst, [20.0, 40.0])
        assert w[1] == pytest.approx(2 * w[0])
        assert w[0] == pytest.approx(100.0 * 1.1 * 20.0 / 30.0)

    def test_overloaded_constant_line_rejected(self):
        net = FeederNetwork(
            bus_count=3,
            lines=(
                Line(0, 1, 0.01, 0.02, 50.0),
                Line(1, 2, 0.01, 0.02, 0.05),  # tiny limit, load-only flow breaks it
            ),
            v_min=0.90,
            v_max=1.10,
            pv_bus=1,
            battery_bus=1,
            load_fraction=np.array([0.0, 0.0, 1.0]),
        )
        inst = dataclasses.replace(tiny_instance(load=(1.0,)), network=net)
        with pytest.raises(InstanceError):
            build_compact(inst, [20.0])


class TestRecourseLp:
    def _battery_instance(self):
        bat = Battery(power_limit=1.0, energy_limit=2.0, efficiency=0.81, initial_energy=1.0)
        return tiny_instance(
            T=3, grid=((10.0, 20.0),), q_max=[2] * 3, pv=[1.5] * 3, load=[0.4] * 3,
            battery=bat, penalty=80.0, adder=0.1,
        )

    def test_strong_duality_and_dual_feasibility(self):
        inst = self._battery_instance()
        comp = build_compact(inst, [15.0, 25.0, 18.0])
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = rng.uniform(0, 1, comp.n)
            xi = comp.trajectory[:0]  # placeholder to silence linters
            xi = rng.uniform(0.5, 1.5, comp.p)
            sol = recourse_lp(comp, x, xi)
            assert sol.duality_residual <= 1e-6
            assert np.all(sol.dual >= -1e-8)
            assert np.max(np.abs(comp.F.T @ sol.dual - comp.b)) <= 1e-6
            # primal feasibility of the returned dispatch
            assert np.min(comp.F @ sol.y - comp.recourse_rhs(x, xi)) >= -1e-7

    def test_value_convex_along_xi_segments(self):
        inst = self._battery_instance()
        comp = build_compact(inst, [15.0, 25.0, 18.0])
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, comp.n)
        for _ in range(8):
            xi1 = rng.uniform(0.3, 1.5, comp.p)
            xi2 = rng.uniform(0.3, 1.5, comp.p)
            alpha = float(rng.uniform(0, 1))
            vmid = recourse_lp(comp, x, alpha * xi1 + (1 - alpha) * xi2).objective
            v1 = recourse_lp(comp, x, xi1).objective
            v2 = recourse_lp(comp, x, xi2).objective
            assert vmid <= alpha * v1 + (1 - alpha) * v2 + 1e-6

    def test_complete_recourse_under_uncertainty(self):
        inst = self._battery_instance()
        comp = build_compact(inst, [15.0, 25.0, 18.0])
        u = BudgetedUncertaintySet(
            xi_bar=inst.pv_forecast, xi_hat=0.5 * inst.pv_forecast, gamma=2
        )
        rng = np.random.default_rng(10)
        for xi in u.enumerate_extreme_points():
            x = rng.uniform(0, 1, comp.n)
            sol = recourse_lp(comp, x, xi)
            assert np.isfinite(sol.objective)

    def test_expected_recourse_aggregates_weights(self):
        inst = self._battery_instance()
        c1 = build_compact(inst, [15.0, 25.0, 18.0], weight=0.25)
        c2 = build_compact(inst, [35.0, 22.0, 28.0], weight=0.75)
        x = np.full(c1.n, 0.3)
        xi = inst.pv_forecast
        v = expected_recourse_value([c1, c2], x, xi)
        v1 = recourse_lp(c1, x, xi).objective
        v2 = recourse_lp(c2, x, xi).objective
        assert v == pytest.approx(0.25 * v1 + 0.75 * v2)


class TestInstanceIO:
    def test_round_trip(self, tmp_path):
        inst = tiny_instance(
            T=2, grid=((10.0, 20.0), (12.0, 22.0)), q_max=[2, 3], pv=[1, 1.5],
            load=[0.2, 0.3],
            battery=Battery(1.0, 2.0, 0.9, 0.5),
        )
        u = BudgetedUncertaintySet(inst.pv_forecast, 0.2 * inst.pv_forecast, gamma=1)
        inst = inst.with_uncertainty(u)
        path = tmp_path / "case.yaml"
        save_instance(inst, path)
        back = load_instance(path)
        assert back.horizon == inst.horizon
        assert all(np.array_equal(a, b) for a, b in zip(back.price_grid, inst.price_grid))
        assert np.array_equal(back.q_max, inst.q_max)
        assert np.array_equal(back.load, inst.load)
        assert back.battery == inst.battery
        assert back.network.lines == inst.network.lines
        assert np.array_equal(back.uncertainty.xi_hat, inst.uncertainty.xi_hat)
        assert back.uncertainty.gamma == 1

    def test_missing_battery_defaults_with_warning(self, tmp_path):
        inst = tiny_instance()
        path = tmp_path / "case.yaml"
        save_instance(inst, path)
        import yaml

        doc = yaml.safe_load(path.read_text())
        del doc["battery"]
        path.write_text(yaml.safe_dump(doc))
        with pytest.warns(UserWarning, match="battery"):
            back = load_instance(path)
        assert back.battery.power_limit == 0.0

    def test_malformed_price_grid_names_field(self, tmp_path):
        inst = tiny_instance()
        path = tmp_path / "case.yaml"
        save_instance(inst, path)
        import yaml

        doc = yaml.safe_load(path.read_text())
        doc["price_grid"][0] = [30.0, 20.0, 10.0]
        path.write_text(yaml.safe_dump(doc))
        with pytest.raises(InstanceError, match=r"price_grid\[0\]"):
            load_instance(path)

    def test_triplet_export_smoke(self):
        comp = build_compact(tiny_instance(), [25.0])
        buf = io.StringIO()
        comp.export_triplets(buf)
        text = buf.getvalue()
        assert "# F" in text and "# H" in text and "# b" in text
