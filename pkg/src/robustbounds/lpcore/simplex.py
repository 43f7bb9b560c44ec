"""Two-phase revised simplex with an explicit dense basis inverse.

Dantzig pricing by default; after ``5 * (rows + cols)`` iterations without
objective progress the solver switches to Bland's rule, which cannot cycle.
LPs with more constraints than variables are solved through their LP dual so
the basis stays small; primal values are then read off the dual multipliers.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import sparse

from ..errors import NumericalFailure
from .program import LinearProgram, LpSolution

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
OPT_TOL = 1e-9
ZERO_ROW_TOL = 1e-14
MAX_ITER = 10**6
REFACTOR_EVERY = 50


class _Revised:
    """Simplex iterations on ``min cost @ z, A z = b, z >= 0`` from a given feasible basis."""

    def __init__(self, A: sparse.csc_matrix, b, basis, max_iter):
        self.A = A
        self.AT = A.T.tocsr()
        self.b = b
        self.m, self.N = A.shape
        self.basis = np.array(basis, dtype=np.int64)
        self.max_iter = max_iter
        self.iterations = 0
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis during refactorization") from exc
        self.xB = self.Binv @ self.b
        self.since_refactor = 0

    def column(self, j):
        lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
        return self.Binv[:, self.A.indices[lo:hi]] @ self.A.data[lo:hi]

    def pivot(self, r, j, a):
        piv = a[r]
        theta = self.xB[r] / piv
        self.xB -= theta * a
        self.xB[r] = theta
        row = self.Binv[r] / piv
        self.Binv -= np.outer(a, row)
        self.Binv[r] = row
        self.basis[r] = j
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()

    def reduced_costs(self, cost, barred):
        y = cost[self.basis] @ self.Binv
        d = cost - self.AT @ y
        d[barred] = 0.0
        d[self.basis] = 0.0
        return d, y

    def run(self, cost, barred) -> str:
        """Iterate to optimality; returns "optimal" or "unbounded"."""
        opt_tol = OPT_TOL * max(1.0, float(np.abs(cost).max(initial=0.0)))
        stall_limit = 5 * (self.m + self.N)
        bland = False
        stall = 0
        best = np.inf
        while True:
            d, _ = self.reduced_costs(cost, barred)
            if bland:
                cand = np.nonzero(d < -opt_tol)[0]
                j = int(cand[0]) if cand.size else -1
            else:
                j = int(np.argmin(d))
                if d[j] >= -opt_tol:
                    j = -1
            if j < 0:
                if self.since_refactor == 0:
                    return "optimal"
                self.refactor()
                continue
            a = self.column(j)
            pos = np.nonzero(a > PIVOT_TOL)[0]
            if pos.size == 0:
                return "unbounded"
            ratios = np.maximum(self.xB[pos], 0.0) / a[pos]
            theta = ratios.min()
            ties = pos[ratios <= theta + 1e-12 * (1.0 + theta)]
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(a[ties])])
            self.pivot(r, j, a)
            self.iterations += 1
            if self.iterations >= self.max_iter:
                raise NumericalFailure(f"simplex iteration cap {self.max_iter} exceeded")
            obj = float(cost[self.basis] @ self.xB)
            if obj < best - 1e-12 * (1.0 + abs(best) if np.isfinite(best) else 1.0):
                best = obj
                stall = 0
            else:
                stall += 1
                if not bland and stall > stall_limit:
                    log.debug("no progress for %d iterations, switching to Bland's rule", stall)
                    bland = True

    def drive_out(self, artificial):
        """Pivot zero-level artificials out of the basis where a structural column allows it."""
        for r in range(self.m):
            if not artificial[self.basis[r]]:
                continue
            row = self.AT @ self.Binv[r]
            row[artificial] = 0.0
            row[self.basis] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-7:
                self.pivot(r, j, self.column(j))


def _standard_form(lp: LinearProgram):
    """Rewrite ``lp`` as ``min cost @ z, A z = b >= 0, z >= 0``.

    Returns the pieces plus the maps needed to recover original values.
    """
    m, n = lp.n_rows, lp.n_vars
    cost = lp.c if lp.sense == "min" else -lp.c
    A = lp.matrix().tocsc()
    free_idx = np.nonzero(lp.free)[0]
    le = np.nonzero(lp.row_sense == "<=")[0]
    ge = np.nonzero(lp.row_sense == ">=")[0]
    slack_rows = np.concatenate([le, ge])
    slack_sign = np.concatenate([np.ones(le.size), -np.ones(ge.size)])
    S = sparse.csc_matrix((slack_sign, (slack_rows, np.arange(slack_rows.size))), shape=(m, slack_rows.size))
    flip = np.where(lp.rhs < 0, -1.0, 1.0)
    D = sparse.diags(flip)
    A_std = (D @ sparse.hstack([A, -A[:, free_idx], S])).tocsc()
    b = flip * lp.rhs
    cost_std = np.concatenate([cost, -cost[free_idx], np.zeros(slack_rows.size)])
    # a slack with coefficient +1 after the flip is a ready-made basic column
    slack_basic = np.full(m, -1, dtype=np.int64)
    eff = slack_sign * flip[slack_rows]
    good = eff > 0
    slack_basic[slack_rows[good]] = n + free_idx.size + np.nonzero(good)[0]
    return A_std, b, cost_std, free_idx, flip, slack_basic


def _solve_direct(lp: LinearProgram, max_iter: int) -> LpSolution:
    m, n = lp.n_rows, lp.n_vars
    A_std, b, cost_std, free_idx, flip, slack_basic = _standard_form(lp)
    N = A_std.shape[1]
    need_art = np.nonzero(slack_basic < 0)[0]
    n_art = need_art.size
    art = sparse.csc_matrix((np.ones(n_art), (need_art, np.arange(n_art))), shape=(m, n_art))
    A_all = sparse.hstack([A_std, art]).tocsc()
    basis = slack_basic.copy()
    basis[need_art] = N + np.arange(n_art)
    artificial = np.zeros(N + n_art, dtype=bool)
    artificial[N:] = True

    solver = _Revised(A_all, b, basis, max_iter)
    if n_art:
        phase1 = artificial.astype(float)
        solver.run(phase1, np.zeros(N + n_art, dtype=bool))
        infeas = float(solver.xB[artificial[solver.basis]].sum())
        if infeas > FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpSolution("infeasible", float("nan"), None, None, solver.iterations)
        solver.drive_out(artificial)
    cost = np.concatenate([cost_std, np.zeros(n_art)])
    status = solver.run(cost, artificial)
    if status == "unbounded":
        obj = -np.inf if lp.sense == "min" else np.inf
        return LpSolution("unbounded", obj, None, None, solver.iterations)

    solver.refactor()
    xB = solver.xB
    if xB.min(initial=0.0) < -1e-6 * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise NumericalFailure(f"basic solution lost feasibility (min {xB.min():.3g})")
    z = np.zeros(N + n_art)
    z[solver.basis] = np.maximum(xB, 0.0)
    x = z[:n].copy()
    x[free_idx] -= z[n : n + free_idx.size]
    _, y_std = solver.reduced_costs(cost, artificial)
    y = flip * y_std
    if lp.sense == "max":
        y = -y
    return LpSolution("optimal", lp.objective(x), x, y, solver.iterations)


def _dual_signs(lp: LinearProgram):
    """Sign ``s_i`` with ``y_i = s_i z_i``, ``z_i >= 0`` on inequality rows, and the row scaling."""
    if lp.sense == "min":
        return np.where(lp.row_sense == "<=", -1.0, 1.0), 1.0
    return np.where(lp.row_sense == ">=", -1.0, 1.0), -1.0


def lp_dual(lp: LinearProgram) -> LinearProgram:
    """LP dual of ``lp`` with sign-flipped multipliers so inequality rows get ``z >= 0``.

    min c.x  ->  max b.y  with  A^T y (<= | =) c;   max c.x  ->  min b.y  with  A^T y (>= | =) c.
    Variable ``i`` of the result belongs to row ``i`` of ``lp``; row ``j`` to variable ``j``.
    """
    s, rs = _dual_signs(lp)
    return LinearProgram(
        "max" if lp.sense == "min" else "min",
        s * lp.rhs,
        lp.cols,
        lp.rows,
        lp.vals * s[lp.rows] * rs,
        np.where(lp.free, "=", "<="),
        lp.c * rs,
        lp.row_sense == "=",
    )


def _farkas(lp: LinearProgram, max_iter: int) -> LpSolution:
    """Most negative ``rhs @ y`` over sign-constrained multipliers with ``sum |y| <= 1``,
    ``A^T y = 0`` on free variables and ``A^T y >= 0`` on the rest.

    A negative optimum certifies that ``lp`` has no feasible point. The basis
    has one row per variable of ``lp`` plus the normalization row.
    """
    # multiplier y_i = s_i z_i (z >= 0), equality rows split into z+ - z-;
    # sign pattern makes y^T A x >= y^T b for every feasible x
    s = np.where(lp.row_sense == ">=", -1.0, 1.0)
    eq = np.nonzero(lp.row_sense == "=")[0]
    m = lp.n_rows
    row_of = np.concatenate([np.arange(m), eq])
    sign = np.concatenate([s, -s[eq]])
    A = lp.matrix().tocsc()
    M = (A[row_of, :].T @ sparse.diags(sign)).tocoo()  # n_vars x columns
    k = row_of.size
    rows = np.concatenate([M.row, np.full(k, lp.n_vars)])
    cols = np.concatenate([M.col, np.arange(k)])
    vals = np.concatenate([M.data, np.ones(k)])
    # A^T y must vanish on free variables and be >= 0 on nonnegative ones
    sense = np.concatenate([np.where(lp.free, "=", ">="), ["<="]])
    rhs = np.concatenate([np.zeros(lp.n_vars), [1.0]])
    ray = LinearProgram("min", sign * lp.rhs[row_of], rows, cols, vals, sense, rhs, np.zeros(k, dtype=bool))
    out = _solve_direct(ray, max_iter)
    if not out.optimal:
        raise NumericalFailure(f"feasibility check ended {out.status}")
    return out


def _solve_via_dual(lp: LinearProgram, max_iter: int) -> LpSolution:
    dual = lp_dual(lp)
    sol = _solve_direct(dual, max_iter)
    if sol.status == "unbounded":
        return LpSolution("infeasible", float("nan"), None, None, sol.iterations, "dual")
    if sol.status == "infeasible":
        # primal is unbounded or infeasible; a Farkas ray tells which
        ray = _farkas(lp, max_iter)
        status = "infeasible" if ray.objective < -FEAS_TOL * max(1.0, float(np.abs(lp.rhs).max(initial=0.0))) else "unbounded"
        obj = float("nan") if status == "infeasible" else (-np.inf if lp.sense == "min" else np.inf)
        return LpSolution(status, obj, None, None, sol.iterations + ray.iterations, "dual")
    s, rs = _dual_signs(lp)
    x = rs * sol.duals
    y = s * sol.x
    return LpSolution("optimal", lp.objective(x), x, y, sol.iterations, "dual")


def simplex_solve(lp: LinearProgram, form: str = "auto", max_iter: int = MAX_ITER) -> LpSolution:
    """Solve ``lp``; ``form`` is "auto", "direct" or "dual".

    Rows whose coefficients are all below ``1e-14`` in magnitude are dropped
    first (or make the problem infeasible when their right-hand side is violated).
    """
    if form not in ("auto", "direct", "dual"):
        raise ValueError(f"unknown form {form!r}")
    A = lp.matrix()
    row_max = abs(A).max(axis=1).toarray().ravel() if lp.n_rows else np.zeros(0)
    empty = row_max < ZERO_ROW_TOL
    if empty.any():
        r = lp.rhs[empty]
        s = lp.row_sense[empty]
        bad = ((s == "<=") & (r < -FEAS_TOL)) | ((s == ">=") & (r > FEAS_TOL)) | ((s == "=") & (np.abs(r) > FEAS_TOL))
        if bad.any():
            return LpSolution("infeasible", float("nan"), None, None, 0)
        reduced = lp.without_rows(empty)
    else:
        reduced = lp
    if form == "dual" or (form == "auto" and reduced.n_rows > reduced.n_vars):
        sol = _solve_via_dual(reduced, max_iter)
    else:
        sol = _solve_direct(reduced, max_iter)
    if sol.duals is not None and empty.any():
        full = np.zeros(lp.n_rows)
        full[~empty] = sol.duals
        sol.duals = full
    return sol
