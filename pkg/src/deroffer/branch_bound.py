"""Built-in branch-and-bound MILP solver on top of the built-in simplex.

Best-bound search with depth-first plunging until the first incumbent,
branching on the most fractional binary.  Deterministic: ties break on the
lowest variable index.
"""

from __future__ import annotations

import heapq

import numpy as np

from .linmodel import (
    MAX,
    STATUS_INFEASIBLE,
    STATUS_ITERATION_LIMIT,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    LinearModel,
    SolveOutcome,
)
from . import simplex

INT_TOL = 1e-6


def _clone_with_bounds(model: LinearModel, lb, ub) -> LinearModel:
    clone = object.__new__(LinearModel)
    clone.__dict__.update(model.__dict__)
    clone.lb = list(lb)
    clone.ub = list(ub)
    clone.kinds = ["continuous"] * model.num_vars
    return clone


def solve_milp(
    model: LinearModel,
    gap_tol: float = 1e-6,
    node_limit: int = 20000,
    on_node=None,
) -> SolveOutcome:
    """Branch-and-bound solve; on_node(bound, incumbent) is a test hook."""
    model.validate()
    binaries = np.nonzero(model.binary_mask())[0]
    if binaries.size == 0:
        return simplex.solve_lp(model)

    sign = -1.0 if model.sense == MAX else 1.0

    def relax(lb, ub):
        out = simplex.solve_lp(_clone_with_bounds(model, lb, ub))
        return out

    root_lb = model.lb_array()
    root_ub = model.ub_array()
    root = relax(root_lb, root_ub)
    if root.status == STATUS_INFEASIBLE:
        return SolveOutcome(status=STATUS_INFEASIBLE, nodes=1)
    if root.status == STATUS_UNBOUNDED:
        return SolveOutcome(status=STATUS_UNBOUNDED, nodes=1)
    if root.status == STATUS_ITERATION_LIMIT:
        return SolveOutcome(status=STATUS_ITERATION_LIMIT, nodes=1)

    best_x = None
    best_obj = np.inf  # in min space
    incumbents = 0
    nodes = 0
    seq = 0
    # heap entries: (bound_min, seq, lb, ub, lp_outcome)
    heap = [(sign * root.objective, seq, root_lb, root_ub, root)]
    plunging = True

    def fractional(x):
        vals = x[binaries]
        frac = np.abs(vals - np.round(vals))
        bad = np.nonzero(frac > INT_TOL)[0]
        if bad.size == 0:
            return None
        scores = np.abs(vals[bad] - np.floor(vals[bad]) - 0.5)
        order = np.lexsort((binaries[bad], scores))
        return int(binaries[bad[order[0]]])

    stack = []
    while heap or stack:
        if stack:
            bound_min, _, lb, ub, out = stack.pop()
        else:
            bound_min, _, lb, ub, out = heapq.heappop(heap)
            plunging = False
        nodes += 1
        if nodes > node_limit:
            status = STATUS_ITERATION_LIMIT
            open_bounds = [e[0] for e in heap] + [e[0] for e in stack] + [bound_min]
            final_bound = min(open_bounds) if open_bounds else best_obj
            return SolveOutcome(
                status=status,
                x=best_x,
                objective=sign * best_obj if best_x is not None else None,
                bound=sign * final_bound,
                nodes=nodes,
                incumbents=incumbents,
            )
        if bound_min >= best_obj - _gap_slack(best_obj, gap_tol):
            continue
        if on_node is not None:
            open_bounds = [e[0] for e in heap] + [e[0] for e in stack] + [bound_min]
            if best_x is not None:
                open_bounds.append(best_obj)
            on_node(sign * min(open_bounds), sign * best_obj if best_x is not None else None)

        branch_var = fractional(out.x)
        if branch_var is None:
            obj_min = sign * out.objective
            if obj_min < best_obj - 1e-12:
                best_obj = obj_min
                best_x = out.x.copy()
                incumbents += 1
                plunging = False
            continue

        frac_val = out.x[branch_var]
        children = []
        for side in (0.0, 1.0):
            lb2, ub2 = lb.copy(), ub.copy()
            if side == 0.0:
                ub2[branch_var] = 0.0
            else:
                lb2[branch_var] = 1.0
            child = relax(lb2, ub2)
            if child.status == STATUS_INFEASIBLE:
                continue
            if child.status in (STATUS_UNBOUNDED, STATUS_ITERATION_LIMIT):
                return SolveOutcome(status=child.status, nodes=nodes)
            cb = max(sign * child.objective, bound_min)
            if cb >= best_obj - _gap_slack(best_obj, gap_tol):
                continue
            children.append((cb, side, lb2, ub2, child))
        if plunging and best_x is None:
            # dive into the side the LP leans toward; stash the other
            children.sort(key=lambda e: abs(e[1] - frac_val))
            for cb, _, lb2, ub2, child in reversed(children):
                seq += 1
                stack.append((cb, seq, lb2, ub2, child))
        else:
            for cb, _, lb2, ub2, child in children:
                seq += 1
                heapq.heappush(heap, (cb, seq, lb2, ub2, child))

    if best_x is None:
        return SolveOutcome(status=STATUS_INFEASIBLE, nodes=nodes)
    return SolveOutcome(
        status=STATUS_OPTIMAL,
        x=best_x,
        objective=sign * best_obj,
        bound=sign * best_obj,
        nodes=nodes,
        incumbents=incumbents,
    )


def _gap_slack(best_obj, gap_tol):
    if not np.isfinite(best_obj):
        return 0.0
    return gap_tol * max(1.0, abs(best_obj))
