"""Solver backend contract.

Every optimization in this package goes through ``Backend.solve``; the
built-in simplex/branch-and-bound and the scipy (HiGHS) wrapper both conform,
so either can be swapped in wholesale.  The HiGHS backend is the default when
scipy is present because desk-scale master problems outgrow a dense tableau.
"""

from __future__ import annotations

import numpy as np

from . import branch_bound, simplex
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


class Backend:
    """Contract: solve(model) -> SolveOutcome.

    Implementations must be deterministic for a fixed model and settings and
    must report infeasible/unbounded as statuses, not exceptions.
    """

    name = "abstract"

    def solve(self, model: LinearModel, gap_tol: float = 1e-6) -> SolveOutcome:
        raise NotImplementedError


class BuiltinBackend(Backend):
    """Self-contained dense simplex + branch-and-bound."""

    name = "builtin"

    def __init__(self, node_limit: int = 20000):
        self.node_limit = node_limit

    def solve(self, model: LinearModel, gap_tol: float = 1e-6) -> SolveOutcome:
        if model.num_binary:
            return branch_bound.solve_milp(model, gap_tol=gap_tol, node_limit=self.node_limit)
        return simplex.solve_lp(model)


class HighsBackend(Backend):
    """scipy.optimize (HiGHS) behind the same contract."""

    name = "highs"

    def solve(self, model: LinearModel, gap_tol: float = 1e-6) -> SolveOutcome:
        model.validate()
        if model.num_binary:
            return self._solve_milp(model, gap_tol)
        return self._solve_lp(model)

    @staticmethod
    def _split_rows(model):
        import scipy.sparse as sp

        A = model.matrix().tocsr()
        senses = np.asarray(model.row_sense)
        rhs = model.rhs_array()
        le = np.nonzero(senses == LE)[0]
        ge = np.nonzero(senses == GE)[0]
        eq = np.nonzero(senses == EQ)[0]
        ub_rows = sp.vstack([A[le], -A[ge]]).tocsr() if (le.size + ge.size) else None
        ub_rhs = np.concatenate([rhs[le], -rhs[ge]]) if (le.size + ge.size) else None
        eq_rows = A[eq] if eq.size else None
        eq_rhs = rhs[eq] if eq.size else None
        return le, ge, eq, ub_rows, ub_rhs, eq_rows, eq_rhs

    def _solve_lp(self, model: LinearModel) -> SolveOutcome:
        from scipy.optimize import linprog

        sign = -1.0 if model.sense == MAX else 1.0
        c = sign * model.obj_array()
        le, ge, eq, A_ub, b_ub, A_eq, b_eq = self._split_rows(model)
        bounds = [
            (lo if lo > -INF else None, hi if hi < INF else None)
            for lo, hi in zip(model.lb, model.ub)
        ]
        res = linprog(
            c,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=bounds,
            method="highs",
        )
        status = _map_linprog_status(res.status)
        if status != STATUS_OPTIMAL:
            return SolveOutcome(status=status)
        duals = np.zeros(model.num_rows)
        if le.size + ge.size:
            marg = np.asarray(res.ineqlin.marginals)
            duals[le] = marg[: le.size]
            duals[ge] = -marg[le.size :]
        if eq.size:
            duals[eq] = np.asarray(res.eqlin.marginals)
        obj = sign * float(res.fun)
        return SolveOutcome(
            status=STATUS_OPTIMAL,
            x=np.asarray(res.x, dtype=float),
            objective=obj,
            duals=sign * duals,
            bound=obj,
        )

    def _solve_milp(self, model: LinearModel, gap_tol: float) -> SolveOutcome:
        from scipy.optimize import Bounds, LinearConstraint, milp

        sign = -1.0 if model.sense == MAX else 1.0
        c = sign * model.obj_array()
        senses = np.asarray(model.row_sense)
        rhs = model.rhs_array()
        lo = np.where(senses == LE, -np.inf, rhs)
        hi = np.where(senses == GE, np.inf, rhs)
        constraints = []
        if model.num_rows:
            constraints.append(LinearConstraint(model.matrix(), lo, hi))
        integrality = model.binary_mask().astype(int)
        res = milp(
            c=c,
            constraints=constraints,
            bounds=Bounds(model.lb_array(), model.ub_array()),
            integrality=integrality,
            options={"mip_rel_gap": gap_tol, "presolve": True},
        )
        status = _map_milp_status(res.status)
        if status not in (STATUS_OPTIMAL, STATUS_ITERATION_LIMIT):
            return SolveOutcome(status=status)
        if res.x is None:
            return SolveOutcome(status=status, nodes=int(res.mip_node_count or 0))
        obj = sign * float(res.fun)
        bound = sign * float(res.mip_dual_bound) if res.mip_dual_bound is not None else obj
        return SolveOutcome(
            status=status,
            x=np.asarray(res.x, dtype=float),
            objective=obj,
            bound=bound,
            nodes=int(res.mip_node_count or 0),
            incumbents=1,
        )


def _map_linprog_status(code: int) -> str:
    return {
        0: STATUS_OPTIMAL,
        1: STATUS_ITERATION_LIMIT,
        2: STATUS_INFEASIBLE,
        3: STATUS_UNBOUNDED,
    }.get(code, STATUS_ITERATION_LIMIT)


def _map_milp_status(code: int) -> str:
    return {
        0: STATUS_OPTIMAL,
        1: STATUS_ITERATION_LIMIT,
        2: STATUS_INFEASIBLE,
        3: STATUS_UNBOUNDED,
    }.get(code, STATUS_ITERATION_LIMIT)


_DEFAULT: Backend | None = None


def default_backend() -> Backend:
    """HiGHS when scipy is importable, else the built-in engine."""
    global _DEFAULT
    if _DEFAULT is None:
        try:
            import scipy.optimize  # noqa: F401

            _DEFAULT = HighsBackend()
        except ImportError:  # pragma: no cover
            _DEFAULT = BuiltinBackend()
    return _DEFAULT


def set_default_backend(backend: Backend) -> None:
    global _DEFAULT
    _DEFAULT = backend
