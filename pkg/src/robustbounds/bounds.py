"""Robust price bounds, epsilon sweeps, improvement certificates and proportional frictions."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InfeasibleRuleError, NumericalFailure
from .instruments import PayoffFunction, PricingRule, tighten, unrestricted_rule
from .lpcore import (
    HedgePortfolio,
    LinearProgram,
    MartingaleMeasure,
    ScenarioGrid,
    assemble_dual,
    assemble_primal,
    build_grid,
    extract_hedge,
    extract_measure,
    lp_dual,
    simplex_solve,
    verify_superhedge,
)
from .marginals import MarginalSystem

log = logging.getLogger(__name__)

GAP_TOL = 1e-6
MOT_TOL = 1e-8
HEDGE_TOL = 1e-7


@dataclass(frozen=True)
class BoundReport:
    status: str  # "optimal", "infeasible" or "unbounded"
    primal: float
    dual: float
    gap: float
    mot_baseline: float
    hedge: Optional[HedgePortfolio] = None
    measure: Optional[MartingaleMeasure] = None
    grid: Optional[ScenarioGrid] = field(default=None, repr=False)
    witness: Optional[InfeasibleRuleError] = None
    iterations: int = 0  # simplex pivots over every LP solved for this report

    @property
    def value(self) -> float:
        return self.primal


def mot_baseline(ms: MarginalSystem, phi: PayoffFunction) -> float:
    """Plain martingale transport bound: no dynamically traded options at all."""
    grid = build_grid(ms, [], unrestricted_rule())
    sol = simplex_solve(assemble_primal(grid, phi, ms, include_options=False))
    if not sol.optimal:
        raise NumericalFailure(f"martingale transport LP ended {sol.status} on a validated marginal system")
    return sol.objective


def _not_optimal(status, mot, grid=None, witness=None, iterations=0):
    nan = float("nan")
    return BoundReport(status, nan, nan, nan, mot, grid=grid, witness=witness, iterations=iterations)


def upper_bound(ms: MarginalSystem, options, rule: PricingRule, phi: PayoffFunction, mot: Optional[float] = None) -> BoundReport:
    """Sharpest upper price bound of ``phi`` consistent with the marginals and the pricing rule.

    Both LPs are solved; the duality gap, the super-hedge and the pricing
    measure are checked before returning. ``mot`` skips recomputing the
    martingale transport baseline when it is already known.
    """
    if mot is None:
        mot = mot_baseline(ms, phi)
    try:
        grid = build_grid(ms, options, rule)
    except InfeasibleRuleError as exc:
        return _not_optimal("infeasible", mot, witness=exc)
    primal = simplex_solve(assemble_primal(grid, phi, ms))
    if not primal.optimal:
        return _not_optimal(primal.status, mot, grid, iterations=primal.iterations)
    dual = simplex_solve(assemble_dual(grid, phi, ms))
    if not dual.optimal:
        raise NumericalFailure(f"dual LP ended {dual.status} while the primal is optimal")

    scale = 1.0 + abs(primal.objective)
    gap = abs(primal.objective - dual.objective)
    if gap > GAP_TOL * scale:
        raise NumericalFailure(f"duality gap {gap:.3g} (primal {primal.objective!r}, dual {dual.objective!r})")
    if primal.objective > mot + MOT_TOL * (1.0 + abs(mot)):
        raise NumericalFailure(f"bound {primal.objective!r} above the transport baseline {mot!r}")
    hedge = extract_hedge(grid, dual)
    phi_scale = 1.0 + float(np.abs(phi(grid.s)).max(initial=0.0))
    slack = verify_superhedge(hedge, grid, phi)
    if slack < -HEDGE_TOL * phi_scale:
        raise NumericalFailure(f"extracted hedge fails to super-replicate by {-slack:.3g}")
    measure = extract_measure(grid, primal)
    if not measure.check(grid, ms):
        raise NumericalFailure(f"extracted measure violates its constraints: {measure.residuals(grid, ms)}")
    return BoundReport(
        "optimal", primal.objective, dual.objective, gap, mot, hedge, measure, grid,
        iterations=primal.iterations + dual.iterations,
    )


def lower_bound(ms: MarginalSystem, options, rule: PricingRule, phi: PayoffFunction, mot: Optional[float] = None) -> BoundReport:
    """Lower bound via the upper bound of ``-phi``. The returned hedge sub-replicates ``phi``."""
    rep = upper_bound(ms, options, rule, -phi, None if mot is None else -mot)
    hedge = rep.hedge
    if hedge is not None:
        hedge = HedgePortfolio(
            [-u for u in hedge.u], [-h for h in hedge.H], {t: -h for t, h in hedge.H_option.items()}, -hedge.cost
        )
    return replace(rep, primal=-rep.primal, dual=-rep.dual, mot_baseline=-rep.mot_baseline, hedge=hedge)


# -- sweeps ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepEntry:
    eps1: float
    eps2: float
    bound: float
    status: str


@dataclass(frozen=True)
class SweepResult:
    entries: List[SweepEntry]
    mot_baseline: float
    eps1: tuple
    eps2: tuple

    def surface(self) -> np.ndarray:
        """Bounds as a ``(len(eps1), len(eps2))`` array, NaN where infeasible."""
        out = np.full((len(self.eps1), len(self.eps2)), np.nan)
        for e in self.entries:
            out[self.eps1.index(e.eps1), self.eps2.index(e.eps2)] = e.bound
        return out

    def monotonicity_violation(self) -> float:
        """Largest increase of the bound along either epsilon axis, over adjacent feasible entries."""
        z = self.surface()
        worst = 0.0
        for d in (np.diff(z, axis=0), np.diff(z, axis=1)):
            d = d[np.isfinite(d)]
            if d.size:
                worst = max(worst, float(d.max()))
        return worst

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps1", "eps2", "bound", "status", "mot_baseline"])
        for e in self.entries:
            w.writerow([repr(e.eps1), repr(e.eps2), repr(e.bound), e.status, repr(self.mot_baseline)])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def epsilon_sweep(
    ms: MarginalSystem,
    options,
    base: PricingRule,
    eps1: Sequence[float],
    eps2: Sequence[float],
    phi: PayoffFunction,
    threads: int = 1,
) -> SweepResult:
    """Upper bound for every tightening ``(e1, e2)`` of ``base``; infeasible pairs are kept with NaN."""
    if base.unrestricted:
        raise ValueError("sweeps need an interval pricing rule")
    eps1 = tuple(float(e) for e in eps1)
    eps2 = tuple(float(e) for e in eps2)
    mot = mot_baseline(ms, phi)
    pairs = [(a, b) for a in eps1 for b in eps2]

    def one(pair):
        rep = upper_bound(ms, options, tighten(base, *pair), phi, mot=mot)
        log.info("eps=(%g, %g): %s %r", pair[0], pair[1], rep.status, rep.primal)
        return SweepEntry(pair[0], pair[1], rep.primal, rep.status)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            entries = list(pool.map(one, pairs))
    else:
        entries = [one(p) for p in pairs]
    return SweepResult(entries, mot, eps1, eps2)


# -- certificates -------------------------------------------------------------------

MASS_TOL = 1e-12
BAND_TOL = 1e-9


@dataclass(frozen=True)
class Violation:
    prefix: tuple
    mass: float
    price: float  # conditional expectation of the option payoff
    lower: float
    upper: float

    @property
    def magnitude(self) -> float:
        return max(self.lower - self.price, self.price - self.upper)


@dataclass(frozen=True)
class CertificateReport:
    violations: Dict[tuple, List[Violation]]

    @property
    def flagged(self) -> bool:
        return any(self.violations.values())


def certificate_check(report: BoundReport, candidate: PricingRule, tol: float = BAND_TOL) -> CertificateReport:
    """Prefixes where the optimizer's conditional option prices leave the candidate bands.

    Only prefixes with positive mass count. For the returned optimizer alone
    this is a necessary condition for the candidate to lower the bound; it is
    sufficient only when every optimizer is flagged.
    """
    if report.measure is None or report.grid is None:
        raise ValueError(f"report has no optimal measure (status {report.status})")
    grid = report.grid
    out = {}
    for t in candidate.triples:
        if t not in grid.option_values:
            raise ValueError(f"candidate triple {t} was not traded in the reported problem")
        mass, price = report.measure.conditional_prices(grid, t)
        pref = grid.prefixes(t[0])
        lo, hi = candidate.evaluate(t, pref)
        live = mass > MASS_TOL
        bad = np.nonzero(live & ((price < lo - tol) | (price > hi + tol)))[0]
        out[t] = [Violation(tuple(pref[b]), float(mass[b]), float(price[b]), float(lo[b]), float(hi[b])) for b in bad]
    return CertificateReport(out)


# -- proportional transaction costs -----------------------------------------------------


@dataclass(frozen=True)
class CallQuote:
    date: int  # 1-based
    strike: float
    bid: float
    ask: float

    def __post_init__(self):
        if self.bid > self.ask:
            raise ValueError(f"bid {self.bid} above ask {self.ask} for date {self.date}, strike {self.strike}")


def pinning_quotes(ms: MarginalSystem) -> List[CallQuote]:
    """Zero-spread quotes at strike 0 and at every support point; they fix each marginal on its support."""
    out = []
    for i, m in enumerate(ms.marginals, start=1):
        strikes = np.concatenate([[0.0], m.points])
        for K, c in zip(strikes, m.call(strikes)):
            out.append(CallQuote(i, float(K), float(c), float(c)))
    return out


def _per_period(eps, n, name):
    arr = np.broadcast_to(np.asarray(eps, dtype=float), (n,)).copy()
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def transaction_cost_lp(grid: ScenarioGrid, s0: float, phi, eps_stock, eps_option, quotes) -> LinearProgram:
    n = grid.n
    S = grid.n_scenarios
    e_st = _per_period(eps_stock, n, "eps_stock")
    e_op = _per_period(eps_option, n, "eps_option")
    cols = np.arange(S)
    rows, vals, sense, rhs = [], [], [], []
    n_rows = 0

    def block(ids, coef, s, b, count):
        nonlocal n_rows
        rows.append(n_rows + ids)
        vals.append(np.asarray(coef, dtype=float) * np.ones(S))
        sense.extend([s] * count)
        rhs.extend([b] * count if np.ndim(b) == 0 else list(b))
        n_rows += count

    block(np.zeros(S, dtype=np.int64), 1.0, "=", 1.0, 1)
    for i in range(n):
        # conditional drift of the stock stays within (1 -/+ eps) of the current price
        ids = grid.prefix_id[i]
        cur = s0 if i == 0 else grid.s[:, i - 1]
        nxt = grid.s[:, i]
        cnt = grid.n_prefixes(i)
        block(ids, nxt - (1 + e_st[i]) * cur, "<=", 0.0, cnt)
        block(ids, nxt - (1 - e_st[i]) * cur, ">=", 0.0, cnt)
    for c, t in enumerate(grid.triples):
        ids = grid.prefix_id[t[0]]
        v = grid.option_values[t]
        cnt = grid.n_prefixes(t[0])
        e = e_op[t[0] - 1]
        block(ids, v - (1 + e) * grid.p[:, c], "<=", 0.0, cnt)
        block(ids, v - (1 - e) * grid.p[:, c], ">=", 0.0, cnt)
    for q in quotes:
        if not 1 <= q.date <= n:
            raise ValueError(f"quote date {q.date} outside 1..{n}")
        pay = np.maximum(grid.s[:, q.date - 1] - q.strike, 0.0)
        if q.bid == q.ask:
            block(np.zeros(S, dtype=np.int64), pay, "=", q.bid, 1)
        else:
            block(np.zeros(S, dtype=np.int64), pay, ">=", q.bid, 1)
            block(np.zeros(S, dtype=np.int64), pay, "<=", q.ask, 1)
    r = np.concatenate(rows)
    cc = np.tile(cols, len(rows))
    v = np.concatenate(vals)
    keep = np.abs(v) >= 1e-14
    return LinearProgram("max", phi(grid.s), r[keep], cc[keep], v[keep], sense, rhs, np.zeros(S, dtype=bool))


def transaction_cost_bound(
    supports,
    s0: float,
    options,
    rule: PricingRule,
    phi: PayoffFunction,
    eps_stock=0.0,
    eps_option=0.0,
    quotes: Sequence[CallQuote] = (),
) -> BoundReport:
    """Upper bound under proportional costs, with static calls quoted bid/ask instead of fixed marginals.

    ``supports`` lists the admissible prices per date. Frictions are given per
    period (scalar or length-n). Only the measure side is solved; the value is
    cross-checked against the LP dual. The returned measure satisfies relaxed
    drift constraints, not the martingale property.
    """
    supports = [np.asarray(x, dtype=float) for x in supports]
    try:
        grid = build_grid(supports, options, rule)
    except InfeasibleRuleError as exc:
        return _not_optimal("infeasible", float("nan"), witness=exc)
    lp = transaction_cost_lp(grid, s0, phi, eps_stock, eps_option, quotes)
    primal = simplex_solve(lp)
    if not primal.optimal:
        return _not_optimal(primal.status, float("nan"), grid, iterations=primal.iterations)
    dual = simplex_solve(lp_dual(lp))
    if not dual.optimal:
        raise NumericalFailure(f"dual of the friction LP ended {dual.status}")
    gap = abs(primal.objective - dual.objective)
    if gap > GAP_TOL * (1.0 + abs(primal.objective)):
        raise NumericalFailure(f"duality gap {gap:.3g} in the friction LP")
    if lp.residuals(primal.x).max() > 1e-7 * (1.0 + s0):
        raise NumericalFailure("friction LP solution violates its constraints")
    return BoundReport(
        "optimal", primal.objective, dual.objective, gap, float("nan"), measure=MartingaleMeasure(primal.x), grid=grid,
        iterations=primal.iterations + dual.iterations,
    )
