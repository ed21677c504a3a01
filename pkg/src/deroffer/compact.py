"""Lowering of an OfferInstance to the compact two-stage matrix form.

First stage:  X = {x >= 0 : sum_k x[t,k] <= q_max[t]}  as  A x >= d.
Second stage: Y(x, xi) = {y : E x + F y >= g + H xi} with y laid out as
[pv, charge, discharge, energy, over-delivery, shortfall] per hour.

Network state (line flows, voltages) is eliminated analytically: on a radial
feeder the lossless branch flows are a linear function of device injections,
so line and voltage limits become reduced rows over the device variables.
Rows whose coefficients vanish entirely are checked against their constants
at build time, which also certifies complete recourse (the zero-dispatch
point plus deviation slacks is always feasible).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import backends
from .instance import InstanceError, OfferInstance
from .linmodel import GE, INF, LinearModel


class RecourseInfeasibleError(RuntimeError):
    """Internal error: complete recourse guarantees this can never happen."""


@dataclass(frozen=True)
class RecourseSolution:
    y: np.ndarray
    objective: float
    dual: np.ndarray
    duality_residual: float


@dataclass(frozen=True)
class CompactProblem:
    """Matrix form of one price-trajectory scenario.

    Immutable after construction; recourse solves hold no shared mutable
    state, so one CompactProblem may serve many concurrent solves.
    """

    n: int
    m: int
    p: int
    A: sp.csr_matrix
    d: np.ndarray
    c_omega: np.ndarray
    b: np.ndarray
    E: sp.csr_matrix
    F: sp.csr_matrix
    g: np.ndarray
    H: sp.csr_matrix
    trajectory: np.ndarray
    weight: float
    row_families: tuple
    row_hours: np.ndarray
    hour_of_block: np.ndarray
    cleared: sp.csr_matrix  # T x n block-clearing indicators
    deviation_weight: np.ndarray  # $/MWh per hour on both slack directions
    q_max: np.ndarray

    @property
    def horizon(self) -> int:
        return self.p

    def commitment(self, x: np.ndarray) -> np.ndarray:
        """Cleared quantity per hour for a first-stage decision."""
        return self.cleared @ np.asarray(x, dtype=float)

    def first_stage_cost(self, x: np.ndarray) -> float:
        return float(self.c_omega @ np.asarray(x, dtype=float))

    def recourse_rhs(self, x, xi) -> np.ndarray:
        return self.g + self.H @ np.asarray(xi, dtype=float) - self.E @ np.asarray(x, dtype=float)

    def recourse_template(self) -> LinearModel:
        """Row-form LP (all >=, free variables) shared across solves."""
        cached = self.__dict__.get("_recourse_template")
        if cached is None:
            model = LinearModel()
            model.add_vars(self.m, lb=-INF, ub=INF, obj=self.b, prefix="y")
            model.add_rows_bulk(self.F, [GE] * len(self.g), self.g)
            object.__setattr__(self, "_recourse_template", model)
            cached = model
        return cached

    def export_triplets(self, fh) -> None:
        """Sparse (row, col, value) text dump of every matrix, for debugging."""
        for name, mat in (("A", self.A), ("E", self.E), ("F", self.F), ("H", self.H)):
            coo = sp.coo_matrix(mat)
            fh.write(f"# {name} {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")
        for name, vec in (("d", self.d), ("c", self.c_omega), ("b", self.b), ("g", self.g)):
            fh.write(f"# {name} {vec.size}\n")
            for i, v in enumerate(vec):
                fh.write(f"{i} {v:.17g}\n")


def cleared_revenue_coeffs(instance: OfferInstance, trajectory) -> np.ndarray:
    """First-stage cost vector c(omega): -lambda_t on cleared blocks, else 0.

    A block clears exactly when its offer price does not exceed the hourly
    clearing price, so revenue is -c(omega)'x.
    """
    trajectory = np.asarray(trajectory, dtype=float)
    if trajectory.shape != (instance.horizon,):
        raise InstanceError(
            f"trajectory: expected length {instance.horizon}, got {trajectory.shape}"
        )
    coeffs = []
    for t, grid in enumerate(instance.price_grid):
        lam = trajectory[t]
        coeffs.append(np.where(grid <= lam, -lam, 0.0))
    return np.concatenate(coeffs)


def clearing_pattern(instance: OfferInstance, trajectory) -> sp.csr_matrix:
    """T x n indicator matrix: row t marks the blocks cleared at hour t."""
    trajectory = np.asarray(trajectory, dtype=float)
    T, n = instance.horizon, instance.n_first_stage
    rows, cols = [], []
    j = 0
    for t, grid in enumerate(instance.price_grid):
        for k in range(grid.size):
            if grid[k] <= trajectory[t]:
                rows.append(t)
                cols.append(j)
            j += 1
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(T, n))


def first_stage_polytope(instance: OfferInstance):
    """X = {x : A x >= d}: nonnegativity plus per-hour capacity."""
    n, T = instance.n_first_stage, instance.horizon
    hour_of_block = np.repeat(np.arange(T), instance.block_counts)
    cap = sp.csr_matrix(
        (-np.ones(n), (hour_of_block, np.arange(n))), shape=(T, n)
    )
    A = sp.vstack([sp.eye(n, format="csr"), cap]).tocsr()
    d = np.concatenate([np.zeros(n), -instance.q_max])
    return A, d, hour_of_block


def deviation_weights(instance: OfferInstance, trajectory) -> np.ndarray:
    """Per-hour $/MWh charged on both deviation slacks.

    The real-time price is the day-ahead price plus a fixed relative adder;
    the penalty scales with the hour's real-time price relative to the
    trajectory mean, and vanishes when penalty_price is zero.
    """
    trajectory = np.asarray(trajectory, dtype=float)
    rt = trajectory * (1.0 + instance.rt_price_adder)
    ref = max(float(np.mean(trajectory)), 1e-9)
    return instance.penalty_price * rt / ref


def build_compact(instance: OfferInstance, trajectory, weight: float = 1.0) -> CompactProblem:
    trajectory = np.asarray(trajectory, dtype=float)
    T = instance.horizon
    if trajectory.shape != (T,):
        raise InstanceError(f"trajectory: expected length {T}, got {trajectory.shape}")
    n = instance.n_first_stage
    m = 6 * T
    net = instance.network
    bat = instance.battery
    eta = float(np.sqrt(bat.efficiency))

    A, d, hour_of_block = first_stage_polytope(instance)
    c_omega = cleared_revenue_coeffs(instance, trajectory)
    cleared = clearing_pattern(instance, trajectory)
    w_dev = deviation_weights(instance, trajectory)

    pv = lambda t: t
    ch = lambda t: T + t
    dis = lambda t: 2 * T + t
    en = lambda t: 3 * T + t
    dp = lambda t: 4 * T + t
    dm = lambda t: 5 * T + t

    b = np.zeros(m)
    for t in range(T):
        b[dp(t)] = w_dev[t]
        b[dm(t)] = w_dev[t]

    # per-bus loads and the feeder reduction
    bus_load = np.outer(net.load_fraction, instance.load)  # (B, T) MW
    masks = net.subtree_masks()
    line_base = {}  # child bus -> base MW flow per hour (load only)
    line_alpha = {}  # 1 if the PV bus sits below the line
    line_beta = {}  # 1 if the battery bus sits below the line
    for ln in net.lines:
        mask = masks[ln.child]
        line_base[ln.child] = bus_load[mask].sum(axis=0)
        line_alpha[ln.child] = 1.0 if mask[net.pv_bus] else 0.0
        line_beta[ln.child] = 1.0 if mask[net.battery_bus] else 0.0
    q_ratio = net.reactive_ratio
    v0 = 1.0

    rows_i, rows_j, rows_v = [], [], []
    h_i, h_j, h_v = [], [], []
    e_i, e_j, e_v = [], [], []
    g = []
    fams = []
    hours = []

    def add_row(entries, rhs, family, hour, h_entries=(), e_entries=()):
        r = len(g)
        for j, v in entries:
            if v != 0.0:
                rows_i.append(r)
                rows_j.append(j)
                rows_v.append(float(v))
        for j, v in h_entries:
            h_i.append(r)
            h_j.append(j)
            h_v.append(float(v))
        for j, v in e_entries:
            e_i.append(r)
            e_j.append(j)
            e_v.append(float(v))
        g.append(float(rhs))
        fams.append(family)
        hours.append(hour)

    for j in range(m):
        add_row([(j, 1.0)], 0.0, "nonneg", j % T)
    for t in range(T):
        add_row([(pv(t), -1.0)], 0.0, "pv_cap", t, h_entries=[(t, -1.0)])
    for t in range(T):
        add_row([(ch(t), -1.0)], -bat.power_limit, "ch_cap", t)
    for t in range(T):
        add_row([(dis(t), -1.0)], -bat.power_limit, "dis_cap", t)
    for t in range(T):
        add_row([(en(t), -1.0)], -bat.energy_limit, "e_cap", t)
    for t in range(T):
        entries = [(en(t), 1.0), (ch(t), -eta), (dis(t), 1.0 / eta)]
        rhs = bat.initial_energy if t == 0 else 0.0
        if t > 0:
            entries.append((en(t - 1), -1.0))
        add_row(entries, rhs, "e_bal_lo", t)
        add_row([(j, -v) for j, v in entries], -rhs, "e_bal_hi", t)
    for t in range(T):
        entries = [(pv(t), 1.0), (dis(t), 1.0), (ch(t), -1.0), (dp(t), -1.0), (dm(t), 1.0)]
        e_row = [(int(j), -1.0) for j in cleared[t].indices]
        add_row(entries, instance.load[t], "rt_lo", t, e_entries=e_row)
        add_row(
            [(j, -v) for j, v in entries],
            -instance.load[t],
            "rt_hi",
            t,
            e_entries=[(j, 1.0) for j, _ in e_row],
        )

    # reduced network rows; constant ones are feasibility-checked instead
    for ln in net.lines:
        alpha, beta = line_alpha[ln.child], line_beta[ln.child]
        base = line_base[ln.child]
        if alpha == 0.0 and beta == 0.0:
            worst = float(np.max(np.abs(base)))
            if worst > ln.flow_limit + 1e-9:
                raise InstanceError(
                    f"network.lines[child={ln.child}]: fixed load flow {worst:.3f} MW "
                    f"exceeds the {ln.flow_limit:.3f} MW limit"
                )
            continue
        if float(np.max(np.abs(base))) > ln.flow_limit + 1e-9:
            raise InstanceError(
                f"network.lines[child={ln.child}]: load-only flow violates the limit, "
                "so complete recourse is lost"
            )
        for t in range(T):
            coeff = [(pv(t), alpha), (dis(t), beta), (ch(t), -beta)]
            add_row(coeff, base[t] - ln.flow_limit, "line_hi", t)
            add_row([(j, -v) for j, v in coeff], -ln.flow_limit - base[t], "line_lo", t)

    for bus in range(1, net.bus_count):
        path = net.path_to_root(bus)
        av = (2.0 / net.s_base) * sum(ln.resistance * line_alpha[ln.child] for ln in path)
        bv = (2.0 / net.s_base) * sum(ln.resistance * line_beta[ln.child] for ln in path)
        vconst = np.full(T, v0)
        for ln in path:
            q_flow = q_ratio * line_base[ln.child]
            vconst -= (2.0 / net.s_base) * (ln.resistance * line_base[ln.child] + ln.reactance * q_flow)
        if av == 0.0 and bv == 0.0:
            if float(vconst.min()) < net.v_min - 1e-9 or float(vconst.max()) > net.v_max + 1e-9:
                raise InstanceError(
                    f"network bus {bus}: load-only voltage leaves [{net.v_min}, {net.v_max}]"
                )
            continue
        if float(vconst.min()) < net.v_min - 1e-9 or float(vconst.max()) > net.v_max + 1e-9:
            raise InstanceError(
                f"network bus {bus}: load-only voltage violates bounds, so complete "
                "recourse is lost"
            )
        for t in range(T):
            coeff = [(pv(t), av), (dis(t), bv), (ch(t), -bv)]
            add_row(coeff, net.v_min - vconst[t], "v_lo", t)
            add_row([(j, -v) for j, v in coeff], vconst[t] - net.v_max, "v_hi", t)

    mY = len(g)
    F = sp.csr_matrix((rows_v, (rows_i, rows_j)), shape=(mY, m))
    H = sp.csr_matrix((h_v, (h_i, h_j)), shape=(mY, T))
    E = sp.csr_matrix((e_v, (e_i, e_j)), shape=(mY, n))

    return CompactProblem(
        n=n,
        m=m,
        p=T,
        A=A,
        d=d,
        c_omega=c_omega,
        b=b,
        E=E,
        F=F,
        g=np.asarray(g),
        H=H,
        trajectory=trajectory,
        weight=float(weight),
        row_families=tuple(fams),
        row_hours=np.asarray(hours),
        hour_of_block=hour_of_block,
        cleared=cleared,
        deviation_weight=w_dev,
        q_max=instance.q_max,
    )


def recourse_lp(compact: CompactProblem, x, xi, backend=None) -> RecourseSolution:
    """Exact second-stage LP: min b'y over {y : F y >= g + H xi - E x}.

    Complete recourse makes infeasibility an internal error, never a
    clamped answer.  Strong duality is checked on every solve.
    """
    backend = backend or backends.default_backend()
    rhs = compact.recourse_rhs(x, xi)
    model = compact.recourse_template().clone_with_rhs(rhs)
    out = backend.solve(model)
    if out.status != "optimal":
        raise RecourseInfeasibleError(
            f"recourse LP returned {out.status}; complete recourse is violated"
        )
    gap = abs(out.objective - float(out.duals @ rhs))
    return RecourseSolution(
        y=out.x,
        objective=float(out.objective),
        dual=out.duals,
        duality_residual=gap / (1.0 + abs(out.objective)),
    )


def scenario_compacts(instance: OfferInstance, scenarios) -> list[CompactProblem]:
    """One compact per weighted trajectory."""
    return [
        build_compact(instance, scenarios.trajectories[i], weight=float(scenarios.weights[i]))
        for i in range(scenarios.count)
    ]


def expected_first_stage_cost(compacts, x) -> float:
    return float(sum(c.weight * c.first_stage_cost(x) for c in compacts))


def expected_recourse_value(compacts, x, xi, backend=None) -> float:
    """Exact scenario-weighted recourse cost at one uncertainty realization."""
    return float(
        sum(c.weight * recourse_lp(c, x, xi, backend=backend).objective for c in compacts)
    )
