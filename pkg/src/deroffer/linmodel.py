"""Lightweight LP/MILP model container shared by all solver backends."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

INF = float("inf")

CONTINUOUS = "continuous"
BINARY = "binary"

LE, GE, EQ = "<=", ">=", "=="

MIN, MAX = "min", "max"

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_ITERATION_LIMIT = "iteration-limit"


class ModelError(ValueError):
    """Raised when a model violates its structural invariants."""


@dataclass
class SolveOutcome:
    """Result of one LP/MILP solve.

    ``duals[i]`` is d(objective)/d(rhs of row i) in the model's reported
    objective (LP only; None for MILPs).  ``nodes``/``incumbents`` carry
    branch-and-bound statistics where the backend tracks them.
    """

    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    bound: float | None = None
    nodes: int = 0
    incumbents: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


class LinearModel:
    """Sparse LP/MILP in inequality form with per-variable bounds.

    Rows are stored as (indices, coefficients, sense, rhs).  Variables are
    continuous or binary; binary variables must have bounds inside [0, 1].
    """

    def __init__(self, sense: str = MIN):
        if sense not in (MIN, MAX):
            raise ModelError(f"objective sense must be 'min' or 'max', got {sense!r}")
        self.sense = sense
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.kinds: list[str] = []
        self.obj: list[float] = []
        self.var_names: list[str] = []
        self._row_idx: list[np.ndarray] = []
        self._row_val: list[np.ndarray] = []
        self.row_sense: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str] = []
        self._csr: sp.csr_matrix | None = None

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.lb)

    @property
    def num_rows(self) -> int:
        return len(self.rhs)

    @property
    def num_binary(self) -> int:
        return sum(1 for k in self.kinds if k == BINARY)

    def add_var(self, lb=0.0, ub=INF, obj=0.0, kind=CONTINUOUS, name="") -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise ModelError(f"unknown variable kind {kind!r}")
        if lb > ub:
            raise ModelError(f"variable {name or self.num_vars}: lb {lb} > ub {ub}")
        if kind == BINARY and (lb < -1e-12 or ub > 1 + 1e-12):
            raise ModelError(f"binary variable {name or self.num_vars} has bounds outside [0, 1]")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.kinds.append(kind)
        self.obj.append(float(obj))
        self.var_names.append(name or f"x{self.num_vars}")
        self._csr = None
        return self.num_vars - 1

    def add_vars(self, n, lb=0.0, ub=INF, obj=0.0, kind=CONTINUOUS, prefix="x") -> list[int]:
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        objs = np.broadcast_to(np.asarray(obj, dtype=float), (n,))
        return [
            self.add_var(lbs[i], ubs[i], objs[i], kind, f"{prefix}{i}") for i in range(n)
        ]

    def add_row(self, idx, val, sense: str, rhs: float, name="") -> int:
        if sense not in (LE, GE, EQ):
            raise ModelError(f"unknown row sense {sense!r}")
        idx = np.asarray(idx, dtype=np.int64)
        val = np.asarray(val, dtype=float)
        if idx.shape != val.shape:
            raise ModelError("row indices and coefficients differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_vars):
            raise ModelError(f"row {name or self.num_rows} references an out-of-range variable")
        self._row_idx.append(idx)
        self._row_val.append(val)
        self.row_sense.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"r{self.num_rows}")
        self._csr = None
        return self.num_rows - 1

    def add_row_dense(self, coeffs, sense: str, rhs: float, name="") -> int:
        coeffs = np.asarray(coeffs, dtype=float)
        nz = np.nonzero(coeffs)[0]
        return self.add_row(nz, coeffs[nz], sense, rhs, name)

    def add_rows_bulk(self, block: sp.csr_matrix, senses, rhs, prefix="r") -> None:
        """Append every row of a CSR block (one sense/rhs each)."""
        block = sp.csr_matrix(block)
        if block.shape[1] != self.num_vars:
            raise ModelError("bulk block column count does not match variable count")
        senses = list(senses)
        rhs = np.asarray(rhs, dtype=float)
        if len(senses) != block.shape[0] or rhs.size != block.shape[0]:
            raise ModelError("bulk block needs one sense and rhs per row")
        indptr, indices, data = block.indptr, block.indices, block.data
        base = self.num_rows
        for i in range(block.shape[0]):
            lo, hi = indptr[i], indptr[i + 1]
            self._row_idx.append(indices[lo:hi].astype(np.int64))
            self._row_val.append(data[lo:hi].astype(float))
            self.row_sense.append(senses[i])
            self.rhs.append(float(rhs[i]))
            self.row_names.append(f"{prefix}{base + i}")
        self._csr = None

    def clone_with_rhs(self, rhs) -> "LinearModel":
        """Shallow copy sharing row structure but owning its rhs vector.

        The clone is safe to solve concurrently with the original as long as
        neither adds rows or variables afterwards.
        """
        rhs = np.asarray(rhs, dtype=float)
        if rhs.size != self.num_rows:
            raise ModelError("rhs length does not match row count")
        clone = object.__new__(LinearModel)
        clone.__dict__.update(self.__dict__)
        clone.rhs = [float(v) for v in rhs]
        return clone

    def set_objective(self, coeffs) -> None:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.num_vars,):
            raise ModelError("objective length does not match variable count")
        self.obj = [float(v) for v in coeffs]

    # ------------------------------------------------------------------
    # matrix views
    # ------------------------------------------------------------------
    def matrix(self) -> sp.csr_matrix:
        """Constraint matrix as CSR (rows in insertion order)."""
        if self._csr is None:
            if self.num_rows == 0:
                self._csr = sp.csr_matrix((0, self.num_vars))
            else:
                indptr = np.zeros(self.num_rows + 1, dtype=np.int64)
                for i, idx in enumerate(self._row_idx):
                    indptr[i + 1] = indptr[i] + idx.size
                indices = (
                    np.concatenate(self._row_idx) if self._row_idx else np.zeros(0, np.int64)
                )
                data = np.concatenate(self._row_val) if self._row_val else np.zeros(0)
                self._csr = sp.csr_matrix(
                    (data, indices, indptr), shape=(self.num_rows, self.num_vars)
                )
        return self._csr

    def obj_array(self) -> np.ndarray:
        return np.asarray(self.obj, dtype=float)

    def lb_array(self) -> np.ndarray:
        return np.asarray(self.lb, dtype=float)

    def ub_array(self) -> np.ndarray:
        return np.asarray(self.ub, dtype=float)

    def rhs_array(self) -> np.ndarray:
        return np.asarray(self.rhs, dtype=float)

    def binary_mask(self) -> np.ndarray:
        return np.asarray([k == BINARY for k in self.kinds], dtype=bool)

    def validate(self) -> None:
        lb, ub = self.lb_array(), self.ub_array()
        if np.any(lb > ub):
            raise ModelError("some variable has lb > ub")
        mask = self.binary_mask()
        if np.any(lb[mask] < -1e-12) or np.any(ub[mask] > 1 + 1e-12):
            raise ModelError("binary variable bounds must lie in [0, 1]")

    def feasibility_residual(self, x: np.ndarray) -> float:
        """Max violation of rows and bounds at the point x."""
        a = self.matrix() @ x
        rhs = self.rhs_array()
        res = 0.0
        for i, s in enumerate(self.row_sense):
            if s == LE:
                res = max(res, a[i] - rhs[i])
            elif s == GE:
                res = max(res, rhs[i] - a[i])
            else:
                res = max(res, abs(a[i] - rhs[i]))
        res = max(res, float(np.max(self.lb_array() - x, initial=0.0)))
        res = max(res, float(np.max(x - self.ub_array(), initial=0.0)))
        return res

    # ------------------------------------------------------------------
    # export
    # ------------------------------------------------------------------
    def dump_lp(self) -> str:
        """Render the model in CPLEX LP text format for external cross-checking."""
        lines = ["\\ deroffer model dump", "Minimize" if self.sense == MIN else "Maximize"]
        lines.append(" obj: " + _lp_expr(np.arange(self.num_vars), self.obj_array(), self.var_names))
        lines.append("Subject To")
        for i in range(self.num_rows):
            op = {LE: "<=", GE: ">=", EQ: "="}[self.row_sense[i]]
            expr = _lp_expr(self._row_idx[i], self._row_val[i], self.var_names)
            lines.append(f" {self.row_names[i]}: {expr} {op} {self.rhs[i]:.12g}")
        lines.append("Bounds")
        for j in range(self.num_vars):
            lo = "-inf" if self.lb[j] == -INF else f"{self.lb[j]:.12g}"
            hi = "+inf" if self.ub[j] == INF else f"{self.ub[j]:.12g}"
            lines.append(f" {lo} <= {self.var_names[j]} <= {hi}")
        binaries = [self.var_names[j] for j in range(self.num_vars) if self.kinds[j] == BINARY]
        if binaries:
            lines.append("Binaries")
            lines.append(" " + " ".join(binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"


def _lp_expr(idx, val, names) -> str:
    parts = []
    for j, v in zip(idx, val):
        if v == 0:
            continue
        sign = "+" if v >= 0 else "-"
        parts.append(f"{sign} {abs(v):.12g} {names[j]}")
    if not parts:
        return "0 " + (names[0] if names else "x0")
    out = " ".join(parts)
    return out[2:] if out.startswith("+ ") else out
