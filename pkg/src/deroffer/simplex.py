"""Built-in primal simplex for LPs with general variable bounds.

Dense revised simplex, two phases with artificial variables.  Dantzig
pricing with a Bland fallback once the degeneracy counter trips, pivot
tolerance 1e-9.  Intended for desk-scale models; larger models go through
the HiGHS backend behind the same contract.
"""

from __future__ import annotations

import numpy as np

from .linmodel import (
    EQ,
    GE,
    INF,
    LE,
    MAX,
    STATUS_INFEASIBLE,
    STATUS_ITERATION_LIMIT,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    LinearModel,
    SolveOutcome,
)

PIVOT_TOL = 1e-9
DUAL_TOL = 1e-9
FEAS_TOL = 1e-7
REFACTOR_EVERY = 100

_BASIC, _AT_LB, _AT_UB, _FREE = 0, 1, 2, 3


class _Tableau:
    """Working arrays for one simplex run (both phases share it)."""

    def __init__(self, A, b, lb, ub):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        m, n = A.shape
        self.m, self.n = m, n
        self.state = np.empty(n, dtype=np.int8)
        for j in range(n):
            if lb[j] > -INF:
                self.state[j] = _AT_LB
            elif ub[j] < INF:
                self.state[j] = _AT_UB
            else:
                self.state[j] = _FREE
        self.x = np.where(self.state == _AT_LB, lb, np.where(self.state == _AT_UB, ub, 0.0))
        self.basis = np.full(m, -1, dtype=np.int64)
        self.binv = np.eye(m)
        self.pivots = 0

    def set_basis(self, basis):
        self.basis = np.asarray(basis, dtype=np.int64)
        self.state[self.basis] = _BASIC
        self.refactor()

    def refactor(self):
        if self.m == 0:
            return
        B = self.A[:, self.basis]
        self.binv = np.linalg.inv(B)
        nonbasic_x = self.x.copy()
        nonbasic_x[self.basis] = 0.0
        rhs = self.b - self.A @ nonbasic_x
        self.x[self.basis] = self.binv @ rhs

    def duals(self, c):
        if self.m == 0:
            return np.zeros(0)
        return c[self.basis] @ self.binv

    def reduced_costs(self, c):
        return c - self.A.T @ self.duals(c)

    def run(self, c, max_iter):
        """Optimize min c.x from the current basis.

        Returns 'optimal', 'unbounded', or 'iteration-limit'.
        """
        m = self.m
        degenerate_streak = 0
        bland_after = 5 * (m + self.n)
        use_bland = False
        movable = self.ub - self.lb > 0
        for _ in range(max_iter):
            d = self.reduced_costs(c)
            can_inc = ((self.state == _AT_LB) | (self.state == _FREE)) & (d < -DUAL_TOL) & movable
            can_dec = ((self.state == _AT_UB) | (self.state == _FREE)) & (d > DUAL_TOL) & movable
            eligible = np.nonzero(can_inc | can_dec)[0]
            if eligible.size == 0:
                return STATUS_OPTIMAL
            if use_bland:
                e = int(eligible[0])
            else:
                e = int(eligible[np.argmax(np.abs(d[eligible]))])
            sigma = 1.0 if can_inc[e] else -1.0

            w = self.binv @ self.A[:, e] if m else np.zeros(0)
            step = sigma * w
            # ratio test over basic variables, then the entering bound flip
            theta = INF
            leave = -1
            leave_at = 0
            if m:
                xb = self.x[self.basis]
                lo = self.lb[self.basis]
                hi = self.ub[self.basis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    down = np.where(step > PIVOT_TOL, (xb - lo) / step, INF)
                    up = np.where(step < -PIVOT_TOL, (hi - xb) / (-step), INF)
                ratios = np.maximum(np.minimum(down, up), 0.0)
                ratios[~np.isfinite(ratios)] = INF
                if ratios.size:
                    if use_bland:
                        cand = np.nonzero(ratios <= ratios.min() + 1e-12)[0]
                        leave = int(cand[np.argmin(self.basis[cand])])
                    else:
                        best = ratios.min()
                        cand = np.nonzero(ratios <= best + 1e-12)[0]
                        # prefer the largest pivot magnitude for stability
                        leave = int(cand[np.argmax(np.abs(step[cand]))])
                    theta = float(ratios[leave])
                    leave_at = _AT_LB if step[leave] > 0 else _AT_UB
            flip = self.ub[e] - self.lb[e]
            if flip < theta:
                theta = flip
                leave = -1
            if not np.isfinite(theta):
                return STATUS_UNBOUNDED

            if theta > 1e-12:
                degenerate_streak = 0
            else:
                degenerate_streak += 1
                if degenerate_streak > bland_after:
                    use_bland = True

            if m:
                self.x[self.basis] -= theta * step
            if leave < 0:
                # bound flip: entering variable crosses to its other bound
                self.x[e] = self.ub[e] if sigma > 0 else self.lb[e]
                self.state[e] = _AT_UB if sigma > 0 else _AT_LB
                continue
            out = int(self.basis[leave])
            self.x[e] = self.x[e] + sigma * theta
            self.x[out] = self.lb[out] if leave_at == _AT_LB else self.ub[out]
            self.state[out] = leave_at
            self.state[e] = _BASIC
            self.basis[leave] = e
            piv = w[leave]
            row = self.binv[leave, :] / piv
            self.binv -= np.outer(w, row)
            self.binv[leave, :] = row
            self.pivots += 1
            if self.pivots % REFACTOR_EVERY == 0:
                self.refactor()
        return STATUS_ITERATION_LIMIT


def solve_lp(model: LinearModel, max_iter: int | None = None) -> SolveOutcome:
    """Solve a pure LP with the built-in simplex.

    Raises ModelError on binary variables; infeasible/unbounded come back
    as statuses, never exceptions.
    """
    model.validate()
    if model.num_binary:
        from .linmodel import ModelError

        raise ModelError("solve_lp requires a model without binary variables")

    n0 = model.num_vars
    m = model.num_rows
    sign = -1.0 if model.sense == MAX else 1.0
    c0 = sign * model.obj_array()

    A_rows = model.matrix().toarray() if m else np.zeros((0, n0))
    b = model.rhs_array()

    # slack per inequality row: A x + s = b with sign-encoded slack bounds
    n_slack = sum(1 for s in model.row_sense if s != EQ)
    n = n0 + n_slack
    A = np.zeros((m, n))
    A[:, :n0] = A_rows
    lb = np.concatenate([model.lb_array(), np.zeros(n_slack)])
    ub = np.concatenate([model.ub_array(), np.zeros(n_slack)])
    k = n0
    for i, s in enumerate(model.row_sense):
        if s == EQ:
            continue
        A[i, k] = 1.0
        if s == LE:
            lb[k], ub[k] = 0.0, INF
        else:  # GE
            lb[k], ub[k] = -INF, 0.0
        k += 1

    if max_iter is None:
        max_iter = max(200, 50 * (m + n))

    tab = _Tableau(A, b, lb, ub)

    if m:
        # phase 1: artificial basis, minimize total infeasibility
        resid = b - A @ tab.x
        art_sign = np.where(resid >= 0, 1.0, -1.0)
        A_art = np.concatenate([A, np.diag(art_sign)], axis=1)
        lb_art = np.concatenate([lb, np.zeros(m)])
        ub_art = np.concatenate([ub, np.full(m, INF)])
        tab = _Tableau(A_art, b, lb_art, ub_art)
        tab.set_basis(np.arange(n, n + m))
        c1 = np.zeros(n + m)
        c1[n:] = 1.0
        status = tab.run(c1, max_iter)
        if status == STATUS_ITERATION_LIMIT:
            return SolveOutcome(status=STATUS_ITERATION_LIMIT)
        if float(np.sum(tab.x[n:])) > FEAS_TOL * (1.0 + float(np.abs(b).max(initial=0.0))):
            return SolveOutcome(status=STATUS_INFEASIBLE)
        # pin artificials at zero for phase 2
        tab.lb[n:] = 0.0
        tab.ub[n:] = 0.0
        tab.state[n:][tab.state[n:] != _BASIC] = _AT_LB
        tab.x[n:][tab.state[n:] != _BASIC] = 0.0
        c2 = np.concatenate([c0, np.zeros(n_slack + m)])
    else:
        c2 = np.concatenate([c0, np.zeros(n_slack)])

    status = tab.run(c2, max_iter)
    if status == STATUS_UNBOUNDED:
        return SolveOutcome(status=STATUS_UNBOUNDED)
    if status == STATUS_ITERATION_LIMIT:
        return SolveOutcome(status=STATUS_ITERATION_LIMIT)

    tab.refactor()
    x = tab.x[:n0].copy()
    obj = float(c0 @ x)
    pi = tab.duals(c2) if m else np.zeros(0)
    return SolveOutcome(
        status=STATUS_OPTIMAL,
        x=x,
        objective=sign * obj,
        duals=sign * pi,
        bound=sign * obj,
    )


def dual_objective(model: LinearModel, duals: np.ndarray) -> float:
    """Lagrangian dual value for a min-sense LP at the given row multipliers.

    Valid lower bound on the optimum whenever the induced reduced costs
    price every infinite bound with the correct sign (true at optimality).
    """
    assert model.sense != MAX, "dual_objective is defined for min-sense models"
    rc = model.obj_array() - model.matrix().T @ duals
    lb, ub = model.lb_array(), model.ub_array()
    val = float(duals @ model.rhs_array())
    for j in range(model.num_vars):
        if rc[j] > 0:
            val += rc[j] * lb[j] if lb[j] > -INF else -INF
        elif rc[j] < 0:
            val += rc[j] * ub[j] if ub[j] < INF else -INF
    return val


def complementary_slackness_residual(model: LinearModel, out: SolveOutcome) -> float:
    """Max |dual_i * slack_i| over rows, scaled by (1 + |rhs|)."""
    if out.x is None or out.duals is None:
        return float("nan")
    ax = model.matrix() @ out.x
    res = 0.0
    for i, s in enumerate(model.row_sense):
        slack = model.rhs[i] - ax[i] if s in (LE, GE) else 0.0
        res = max(res, abs(out.duals[i] * slack) / (1.0 + abs(model.rhs[i])))
    return res
