"""Grid-indexed views of LP solutions: hedging strategies and pricing measures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .assemble import dual_layout
from .grid import ScenarioGrid
from .program import LpSolution


@dataclass
class HedgePortfolio:
    """Static positions ``u[i]`` per support point, stock holdings ``H[i-1]`` per
    prefix of length ``i``, option holdings ``H_option[t]`` per prefix of length ``t[0]``.
    """

    u: list
    H: list
    H_option: Dict[tuple, np.ndarray]
    cost: float

    def static_cost(self, ms) -> float:
        return float(sum(np.dot(u, m.weights) for u, m in zip(self.u, ms.marginals)))

    def value(self, grid: ScenarioGrid) -> np.ndarray:
        """Strategy payoff on every scenario of ``grid``."""
        out = np.zeros(grid.n_scenarios)
        for i, u in enumerate(self.u):
            out += u[grid.path_index[:, i]]
        for i, h in enumerate(self.H, start=1):
            out += h[grid.prefix_id[i]] * (grid.s[:, i] - grid.s[:, i - 1])
        for c, t in enumerate(grid.triples):
            h = self.H_option.get(t)
            if h is not None:
                out += h[grid.prefix_id[t[0]]] * (grid.option_values[t] - grid.p[:, c])
        return out


@dataclass
class MartingaleMeasure:
    """Weight per scenario of the grid it was solved on."""

    weights: np.ndarray

    def expectation(self, grid: ScenarioGrid, phi) -> float:
        return float(self.weights @ phi(grid.s))

    def path_weights(self, grid: ScenarioGrid) -> np.ndarray:
        """Weights aggregated over option-price choices, per price path."""
        return np.bincount(grid.prefix_id[grid.n], weights=self.weights, minlength=grid.n_prefixes(grid.n))

    def conditional_prices(self, grid: ScenarioGrid, triple):
        """``(mass, E[v | prefix])`` per prefix of length ``triple[0]``; NaN where mass is zero."""
        i = triple[0]
        ids = grid.prefix_id[i]
        mass = np.bincount(ids, weights=self.weights, minlength=grid.n_prefixes(i))
        num = np.bincount(ids, weights=self.weights * grid.option_values[tuple(triple)], minlength=mass.size)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(mass > 0, num / np.where(mass > 0, mass, 1.0), np.nan)
        return mass, cond

    def residuals(self, grid: ScenarioGrid, ms) -> dict:
        """Largest violation of each defining property of the measure."""
        w = self.weights
        out = {"negativity": float(max(0.0, -w.min(initial=0.0))), "mass": abs(float(w.sum()) - 1.0)}
        marg = 0.0
        for i, m in enumerate(ms.marginals):
            agg = np.bincount(grid.path_index[:, i], weights=w, minlength=len(m))
            marg = max(marg, float(np.abs(agg - m.weights).max()))
        out["marginal"] = marg
        mart = 0.0
        for i in range(1, grid.n):
            agg = np.bincount(grid.prefix_id[i], weights=w * (grid.s[:, i] - grid.s[:, i - 1]))
            mart = max(mart, float(np.abs(agg).max(initial=0.0)))
        out["martingale"] = mart
        opt = 0.0
        if not grid.unrestricted:
            for c, t in enumerate(grid.triples):
                agg = np.bincount(grid.prefix_id[t[0]], weights=w * (grid.option_values[t] - grid.p[:, c]))
                opt = max(opt, float(np.abs(agg).max(initial=0.0)))
        out["option"] = opt
        return out

    def check(self, grid: ScenarioGrid, ms) -> bool:
        res = self.residuals(grid, ms)
        scale = 1.0 + ms.s0
        return (
            res["negativity"] <= 1e-10
            and res["mass"] <= 1e-8
            and res["marginal"] <= 1e-7
            and res["martingale"] <= 1e-7 * scale
            and res["option"] <= 1e-7 * scale
        )


def extract_hedge(grid: ScenarioGrid, sol: LpSolution) -> HedgePortfolio:
    if not sol.optimal:
        raise ValueError(f"cannot extract a hedge from a {sol.status} solution")
    lay = dual_layout(grid)
    x = sol.x
    u = [x[lay.u[i] : lay.u[i] + k].copy() for i, k in enumerate(grid.sizes)]
    H = [x[lay.H[i - 1] : lay.H[i - 1] + grid.n_prefixes(i)].copy() for i in range(1, grid.n)]
    H_option = {t: x[o : o + grid.n_prefixes(t[0])].copy() for t, o in lay.H_option.items()}
    return HedgePortfolio(u, H, H_option, sol.objective)


def extract_measure(grid: ScenarioGrid, sol: LpSolution) -> MartingaleMeasure:
    if not sol.optimal:
        raise ValueError(f"cannot extract a measure from a {sol.status} solution")
    return MartingaleMeasure(np.asarray(sol.x, dtype=float).copy())


def verify_superhedge(h: HedgePortfolio, grid: ScenarioGrid, phi) -> float:
    """Smallest ``strategy - phi`` over all scenarios; nonnegative for a super-hedge."""
    return float((h.value(grid) - phi(grid.s)).min())
