"""Classical column-and-constraint generation for the two-stage problem.

Master: min eta over x in X and one recourse copy per (active vertex,
trajectory) pair; eta dominates the scenario-weighted cost of every active
vertex, so it lower-bounds the true optimum.  Subproblem: exact worst case
over the enumerated vertices of the budgeted set (falls back to a dualized
big-M MILP when enumeration would blow past the cap).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import backends
from .compact import CompactProblem, recourse_lp, scenario_compacts
from .linmodel import EQ, GE, INF, LE, LinearModel
from .uncertainty import BudgetedUncertaintySet, CapacityError

DEFAULT_TOL = 1e-4
DEFAULT_ENUM_CAP = 10**6


class ConfigurationError(RuntimeError):
    """A required finite bound or input is unavailable."""


@dataclass
class IterationRecord:
    k: int
    lower_bound: float
    upper_bound: float
    gap: float
    master_time: float
    sub_time: float


@dataclass
class CcgState:
    """Progress of one CCG run; bounds tighten monotonically."""

    iteration: int = 0
    active_points: list = field(default_factory=list)
    lower_bound: float = -np.inf
    upper_bound: float = np.inf
    incumbent_x: np.ndarray | None = None
    objective: float = np.inf
    log: list = field(default_factory=list)
    converged: bool = False

    def gap(self) -> float:
        if not np.isfinite(self.upper_bound):
            return np.inf
        return (self.upper_bound - self.lower_bound) / (1.0 + abs(self.upper_bound))

    def write_log_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "LB", "UB", "gap", "master_time", "sub_time"])
            for rec in self.log:
                writer.writerow(
                    [rec.k, rec.lower_bound, rec.upper_bound, rec.gap,
                     rec.master_time, rec.sub_time]
                )


def build_master_model(compacts: list[CompactProblem], active_points):
    """LP with variables [x, eta, y^(i,omega)...] and vertex-dominance rows."""
    if not active_points:
        raise ValueError("active_points must be nonempty")
    base = compacts[0]
    n, T = base.n, base.p
    k, W = len(active_points), len(compacts)
    m_each = [c.m for c in compacts]

    model = LinearModel()
    model.add_vars(n, lb=0.0, ub=INF, prefix="x")
    eta = model.add_var(lb=-INF, ub=INF, obj=1.0, name="eta")
    y_offsets = []
    for i in range(k):
        row = []
        for w, c in enumerate(compacts):
            row.append(model.add_vars(c.m, lb=-INF, ub=INF, prefix=f"y_{i}_{w}_")[0])
        y_offsets.append(row)
    nv = model.num_vars

    # offer capacity: sum of blocks per hour <= q_max
    cap = sp.csr_matrix(
        (np.ones(n), (base.hour_of_block, np.arange(n))), shape=(T, nv)
    )
    model.add_rows_bulk(cap, [LE] * T, base.q_max, prefix="cap")

    cbar = sum(c.weight * c.c_omega for c in compacts)
    for i in range(k):
        idx = [eta]
        val = [1.0]
        idx.extend(range(n))
        val.extend(-cbar)
        for w, c in enumerate(compacts):
            nz = np.nonzero(c.b)[0]
            idx.extend(y_offsets[i][w] + nz)
            val.extend(-c.weight * c.b[nz])
        model.add_row(np.asarray(idx), np.asarray(val), GE, 0.0, name=f"eta_{i}")

    for i, xi in enumerate(active_points):
        for w, c in enumerate(compacts):
            block = sp.hstack(
                [
                    c.E,
                    sp.csr_matrix((c.F.shape[0], y_offsets[i][w] - n)),
                    c.F,
                    sp.csr_matrix((c.F.shape[0], nv - y_offsets[i][w] - c.m)),
                ]
            ).tocsr()
            rhs = c.g + c.H @ np.asarray(xi, dtype=float)
            model.add_rows_bulk(block, [GE] * len(rhs), rhs, prefix=f"rec_{i}_{w}_")
    return model, eta


def solve_master(compacts, active_points, backend=None):
    """Returns (x, eta); eta is a valid lower bound on the true optimum."""
    backend = backend or backends.default_backend()
    model, eta_idx = build_master_model(compacts, active_points)
    out = backend.solve(model)
    if not out.is_optimal:
        raise RuntimeError(f"master LP returned status {out.status}")
    n = compacts[0].n
    return out.x[:n].copy(), float(out.x[eta_idx])


def exact_subproblem(
    compacts,
    x,
    uncertainty: BudgetedUncertaintySet,
    backend=None,
    enum_cap: int = DEFAULT_ENUM_CAP,
):
    """Q(x) by full vertex enumeration; ties break on the lowest index.

    Falls back to the dualized MILP when the vertex count exceeds the cap.
    """
    backend = backend or backends.default_backend()
    try:
        points = uncertainty.enumerate_extreme_points(cap=enum_cap)
    except CapacityError:
        return dualized_subproblem_milp(compacts, x, uncertainty, backend=backend)
    best_val = -np.inf
    best_xi = None
    for xi in points:
        val = sum(c.weight * recourse_lp(c, x, xi, backend=backend).objective for c in compacts)
        if val > best_val + 1e-12:
            best_val = val
            best_xi = xi
    return best_xi, float(best_val)


def _initial_pv_dual_bound(compact: CompactProblem) -> float:
    """Structural starting big-M for the PV-availability duals.

    The only costs in b are the deviation weights, and one MWh of PV can at
    most displace penalized deviations (amplified through the battery at
    worst 1/efficiency per hop), so the shadow price of availability lives
    on the scale of max(b).  The dualized MILP verifies exactness after the
    solve and doubles this bound if it ever binds, so the constant is a
    starting point, not a correctness assumption.
    """
    return 4.0 * (1.0 + float(np.max(compact.b, initial=0.0)))


def dualized_subproblem_milp(
    compacts,
    x,
    uncertainty: BudgetedUncertaintySet,
    backend=None,
    big_m_scale: float = 1.0,
    max_doublings: int = 8,
):
    """Worst case via strong duality: bilinear pi'H(xi) linearized by big-M.

    max over z binary (sum z <= gamma) and pi_w in the dual polytopes of the
    scenario-weighted dual objective.  Any finite M makes the MILP a valid
    under-estimator of Q(x), exact once M clears the optimal duals, so after
    each solve the objective is checked against the exact recourse value at
    the returned vertex and M doubles if the linearization ever bound.

    ``big_m_scale`` != 1 bypasses that safeguard and scales the initial M;
    it exists for fault-injection tests only.
    """
    backend = backend or backends.default_backend()
    if isinstance(compacts, CompactProblem):
        compacts = [compacts]
    x = np.asarray(x, dtype=float)
    T = compacts[0].p
    xi_bar, xi_hat = uncertainty.xi_bar, uncertainty.xi_hat
    support = set(int(t) for t in uncertainty.support())
    verify = big_m_scale == 1.0

    M = big_m_scale * max(_initial_pv_dual_bound(c) for c in compacts)
    for _ in range(max_doublings):
        out, z_vars = _solve_dualized_once(
            compacts, x, uncertainty, backend, support, xi_bar, xi_hat, M
        )
        z_star = np.round(out.x[:T]).astype(float)
        xi_star = uncertainty.realization(z_star)
        if not verify:
            return xi_star, float(out.objective)
        exact = sum(
            c.weight * recourse_lp(c, x, xi_star, backend=backend).objective
            for c in compacts
        )
        if abs(out.objective - exact) <= 1e-6 * (1.0 + abs(exact)):
            return xi_star, float(out.objective)
        M *= 2.0
    raise ConfigurationError(
        "dualized subproblem could not certify exactness; no finite big-M found"
    )


def _solve_dualized_once(compacts, x, uncertainty, backend, support, xi_bar, xi_hat, M):
    T = compacts[0].p
    model = LinearModel(sense="max")
    z = model.add_vars(T, lb=0.0, ub=1.0, kind="binary", prefix="z")
    for t in range(T):
        if t not in support:
            model.ub[z[t]] = 0.0
    model.add_row(np.asarray(z), np.ones(T), LE, float(uncertainty.gamma), name="budget")

    for w, c in enumerate(compacts):
        rho = c.weight
        mY = c.F.shape[0]
        pv_rows = [i for i, f in enumerate(c.row_families) if f == "pv_cap"]
        gex = c.g - c.E @ x
        pi = model.add_vars(mY, lb=0.0, ub=INF, prefix=f"pi{w}_")
        # objective: rho * [pi'(g - Ex) - sum_t xi_bar_t pi_pv_t + sum_t xi_hat_t w_t]
        for i in range(mY):
            model.obj[pi[i]] += rho * gex[i]
        for t, r in enumerate(pv_rows):
            model.obj[pi[r]] += -rho * xi_bar[t]
            model.ub[pi[r]] = M  # keeps the McCormick relaxation bounded
        FT = sp.hstack([sp.csr_matrix((c.m, pi[0])), c.F.T]).tocsr()
        model.add_rows_bulk(FT, [EQ] * c.m, c.b, prefix=f"feas{w}_")
        for t, r in enumerate(pv_rows):
            if t not in support or xi_hat[t] == 0.0:
                continue
            wv = model.add_var(lb=0.0, ub=INF, obj=rho * xi_hat[t], name=f"w{w}_{t}")
            model.add_row([wv, z[t]], [1.0, -M], LE, 0.0)
            model.add_row([wv, pi[r]], [1.0, -1.0], LE, 0.0)
            model.add_row([wv, pi[r], z[t]], [1.0, -1.0, -M], GE, -M)
    out = backend.solve(model, gap_tol=1e-9)
    if not out.is_optimal:
        raise RuntimeError(f"dualized subproblem returned {out.status}")
    return out, z


def ccg_solve(
    instance,
    scenarios,
    tol: float = DEFAULT_TOL,
    max_iter: int = 100,
    backend=None,
    enum_cap: int = DEFAULT_ENUM_CAP,
    log_path=None,
) -> CcgState:
    """Full CCG loop; stops when UB - LB <= tol * (1 + |UB|)."""
    backend = backend or backends.default_backend()
    if instance.uncertainty is None:
        raise ConfigurationError("instance carries no uncertainty set")
    uncertainty = instance.uncertainty
    compacts = scenario_compacts(instance, scenarios)
    state = CcgState(active_points=[uncertainty.xi_bar.copy()])
    seen = {_point_key(uncertainty.xi_bar)}

    for k in range(1, max_iter + 1):
        t0 = time.perf_counter()
        x_k, eta_k = solve_master(compacts, state.active_points, backend=backend)
        t1 = time.perf_counter()
        xi_star, q_val = exact_subproblem(
            compacts, x_k, uncertainty, backend=backend, enum_cap=enum_cap
        )
        t2 = time.perf_counter()

        state.iteration = k
        state.lower_bound = max(state.lower_bound, eta_k)
        cost_k = sum(c.weight * c.first_stage_cost(x_k) for c in compacts) + q_val
        if cost_k < state.upper_bound:
            state.upper_bound = cost_k
            state.incumbent_x = x_k
            state.objective = cost_k
        state.log.append(
            IterationRecord(
                k=k,
                lower_bound=state.lower_bound,
                upper_bound=state.upper_bound,
                gap=state.gap(),
                master_time=t1 - t0,
                sub_time=t2 - t1,
            )
        )
        if state.gap() <= tol:
            state.converged = True
            break
        key = _point_key(xi_star)
        if key in seen:
            # the worst vertex is already enforced; bounds can only be noise apart
            state.converged = state.gap() <= max(tol, 1e-6) * 10
            break
        seen.add(key)
        state.active_points.append(xi_star)

    if log_path is not None:
        state.write_log_csv(log_path)
    return state


def monolithic_solve(instance, scenarios, backend=None, enum_cap: int = DEFAULT_ENUM_CAP):
    """Deterministic equivalent: every vertex enforced at once (exact)."""
    backend = backend or backends.default_backend()
    if instance.uncertainty is None:
        raise ConfigurationError("instance carries no uncertainty set")
    points = instance.uncertainty.enumerate_extreme_points(cap=enum_cap)
    compacts = scenario_compacts(instance, scenarios)
    x, eta = solve_master(compacts, points, backend=backend)
    return x, eta


def _point_key(xi) -> tuple:
    return tuple(np.round(np.asarray(xi, dtype=float), 9))
