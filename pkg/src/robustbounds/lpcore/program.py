"""Linear program container and its plain-text sparse format."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

SENSES = ("<=", "=", ">=")


@dataclass
class LinearProgram:
    """``sense`` in {"min", "max"}; constraints given as sparse (row, col, value) triples.

    ``free[j]`` marks variable ``j`` as unbounded; otherwise it is ``>= 0``.
    """

    sense: str
    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    row_sense: np.ndarray
    rhs: np.ndarray
    free: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=float)
        self.row_sense = np.asarray(self.row_sense, dtype="<U2")
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.free = np.asarray(self.free, dtype=bool)
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if not (self.rows.shape == self.cols.shape == self.vals.shape):
            raise ValueError("constraint triples must have equal length")
        if self.free.shape != self.c.shape or self.row_sense.shape != self.rhs.shape:
            raise ValueError("inconsistent dimensions")
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= self.n_rows):
            raise ValueError("row index out of range")
        if self.cols.size and (self.cols.min() < 0 or self.cols.max() >= self.n_vars):
            raise ValueError("column index out of range")
        if not set(np.unique(self.row_sense)) <= set(SENSES):
            raise ValueError("row senses must be '<=', '=' or '>='")
        for name in ("c", "vals", "rhs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    @property
    def n_vars(self) -> int:
        return self.c.size

    def matrix(self) -> sparse.csr_matrix:
        """Constraint matrix with duplicate triples summed."""
        return sparse.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n_rows, self.n_vars))

    def residuals(self, x) -> np.ndarray:
        """Signed violation per row (positive means violated)."""
        ax = self.matrix() @ np.asarray(x, dtype=float)
        viol = np.zeros(self.n_rows)
        le = self.row_sense == "<="
        ge = self.row_sense == ">="
        eq = self.row_sense == "="
        viol[le] = ax[le] - self.rhs[le]
        viol[ge] = self.rhs[ge] - ax[ge]
        viol[eq] = np.abs(ax[eq] - self.rhs[eq])
        return viol

    def objective(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=float))

    def without_rows(self, mask) -> "LinearProgram":
        """Copy with the rows selected by boolean ``mask`` removed."""
        mask = np.asarray(mask, dtype=bool)
        keep = ~mask
        new_index = np.cumsum(keep) - 1
        sel = keep[self.rows]
        return LinearProgram(
            self.sense, self.c, new_index[self.rows[sel]], self.cols[sel], self.vals[sel],
            self.row_sense[keep], self.rhs[keep], self.free,
        )

    # -- text format ------------------------------------------------------------
    def dumps(self) -> str:
        out = [f"# lp sense={self.sense} rows={self.n_rows} cols={self.n_vars} nnz={self.vals.size}"]
        for j in range(self.n_vars):
            out.append(f"c {j} {float(self.c[j])!r} {'free' if self.free[j] else 'nonneg'}")
        for i in range(self.n_rows):
            out.append(f"r {i} {self.row_sense[i]} {float(self.rhs[i])!r}")
        for r, col, v in zip(self.rows, self.cols, self.vals):
            out.append(f"{r} {col} {float(v)!r}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LinearProgram":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = dict(tok.split("=") for tok in lines[0].lstrip("#").split()[1:])
        n_rows, n_vars = int(head["rows"]), int(head["cols"])
        c = np.zeros(n_vars)
        free = np.zeros(n_vars, dtype=bool)
        rhs = np.zeros(n_rows)
        sense = np.full(n_rows, "=", dtype="<U2")
        rr, cc, vv = [], [], []
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "c":
                j = int(parts[1])
                c[j] = float(parts[2])
                free[j] = parts[3] == "free"
            elif parts[0] == "r":
                i = int(parts[1])
                sense[i] = parts[2]
                rhs[i] = float(parts[3])
            else:
                rr.append(int(parts[0]))
                cc.append(int(parts[1]))
                vv.append(float(parts[2]))
        return cls(head["sense"], c, rr, cc, vv, sense, rhs, free)


@dataclass
class LpSolution:
    """Solver output. At optimum ``objective == rhs @ duals`` (Lagrange multipliers)."""

    status: str
    objective: float
    x: Optional[np.ndarray]
    duals: Optional[np.ndarray]
    iterations: int
    method: str = "direct"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"
