"""Primal (measure) and dual (super-hedge) linear programs on a scenario grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ScenarioGrid
from .program import LinearProgram

COEF_EPS = 1e-14


def _weights(ms):
    return [np.asarray(m.weights, dtype=float) for m in ms.marginals]


class _Triples:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(rows, cols, np.asarray(vals, dtype=float))
        keep = np.abs(vals) >= COEF_EPS
        self.r.append(rows[keep])
        self.c.append(cols[keep])
        self.v.append(vals[keep])

    def arrays(self):
        if not self.r:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        return np.concatenate(self.r), np.concatenate(self.c), np.concatenate(self.v)


@dataclass(frozen=True)
class PrimalLayout:
    marginal: list  # first row per date
    martingale: list  # first row per prefix length 1..n-1
    option: dict  # first row per triple
    n_rows: int


def primal_layout(grid: ScenarioGrid, include_options: bool = True) -> PrimalLayout:
    row = 1
    marginal = []
    for k in grid.sizes:
        marginal.append(row)
        row += k
    martingale = []
    for i in range(1, grid.n):
        martingale.append(row)
        row += grid.n_prefixes(i)
    option = {}
    if include_options:
        for t in grid.triples:
            option[t] = row
            row += grid.n_prefixes(t[0])
    return PrimalLayout(marginal, martingale, option, row)


def assemble_primal(grid: ScenarioGrid, phi, ms, include_options: bool = True) -> LinearProgram:
    """Maximize E[phi] over scenario weights.

    Rows: total mass, marginals per support point, martingale per price prefix,
    and ``E[(v - p) 1_prefix] = 0`` per triple and prefix. With
    ``include_options=False`` the option rows are left out (plain MOT).
    """
    lay = primal_layout(grid, include_options)
    S = grid.n_scenarios
    cols = np.arange(S)
    tr = _Triples()
    rhs = np.zeros(lay.n_rows)
    tr.add(0, cols, 1.0)
    rhs[0] = 1.0
    for i, w in enumerate(_weights(ms)):
        tr.add(lay.marginal[i] + grid.path_index[:, i], cols, 1.0)
        rhs[lay.marginal[i] : lay.marginal[i] + w.size] = w
    for i in range(1, grid.n):
        tr.add(lay.martingale[i - 1] + grid.prefix_id[i], cols, grid.s[:, i] - grid.s[:, i - 1])
    for c, t in enumerate(grid.triples):
        if t in lay.option:
            tr.add(lay.option[t] + grid.prefix_id[t[0]], cols, grid.option_values[t] - grid.p[:, c])
    r, cc, v = tr.arrays()
    return LinearProgram(
        "max", phi(grid.s), r, cc, v, np.full(lay.n_rows, "="), rhs, np.zeros(S, dtype=bool)
    )


@dataclass(frozen=True)
class DualLayout:
    u: list  # first variable per date
    H: list  # first variable per prefix length 1..n-1
    H_option: dict  # first variable per triple
    n_vars: int


def dual_layout(grid: ScenarioGrid) -> DualLayout:
    col = 0
    u = []
    for k in grid.sizes:
        u.append(col)
        col += k
    H = []
    for i in range(1, grid.n):
        H.append(col)
        col += grid.n_prefixes(i)
    H_option = {}
    for t in grid.triples:
        H_option[t] = col
        col += grid.n_prefixes(t[0])
    return DualLayout(u, H, H_option, col)


def assemble_dual(grid: ScenarioGrid, phi, ms) -> LinearProgram:
    """Minimize the static cost ``sum_i E_mu_i[u_i]`` subject to super-replication on every scenario."""
    lay = dual_layout(grid)
    S = grid.n_scenarios
    rows = np.arange(S)
    tr = _Triples()
    c = np.zeros(lay.n_vars)
    for i, w in enumerate(_weights(ms)):
        tr.add(rows, lay.u[i] + grid.path_index[:, i], 1.0)
        c[lay.u[i] : lay.u[i] + w.size] = w
    for i in range(1, grid.n):
        tr.add(rows, lay.H[i - 1] + grid.prefix_id[i], grid.s[:, i] - grid.s[:, i - 1])
    for col, t in enumerate(grid.triples):
        tr.add(rows, lay.H_option[t] + grid.prefix_id[t[0]], grid.option_values[t] - grid.p[:, col])
    r, cc, v = tr.arrays()
    return LinearProgram(
        "min", c, r, cc, v, np.full(S, ">="), phi(grid.s), np.ones(lay.n_vars, dtype=bool)
    )
