"""Exotic payoffs, dynamically tradable options and pricing rules.

A pricing rule assigns every active triple ``(i, j, k)`` (trade at ``t_i`` the
option ``k`` maturing at ``t_j``, ``i < j``, all 1-based) an interval of
admissible prices that depends on the price prefix ``(s_1, ..., s_i)``.
Band functions are vectorized: they receive an array of prefixes with shape
``(P, i)`` and return ``P`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import special

Triple = Tuple[int, int, int]


# -- exotic payoffs --------------------------------------------------------------

@dataclass(frozen=True)
class PayoffFunction:
    """Payoff of the exotic as a function of the price path ``(s_1, ..., s_n)``.

    ``fn`` maps an array of paths ``(P, n)`` to ``P`` values. ``arity`` is
    ``None`` when the payoff accepts any horizon.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    arity: Optional[int] = None
    params: Mapping = field(default_factory=dict)

    def __call__(self, paths) -> np.ndarray:
        s = np.asarray(paths, dtype=float)
        single = s.ndim == 1
        s = np.atleast_2d(s)
        if self.arity is not None and s.shape[1] != self.arity:
            raise ValueError(f"payoff {self.name} expects {self.arity} dates, got {s.shape[1]}")
        out = np.asarray(self.fn(s), dtype=float)
        return float(out[0]) if single else out

    def __neg__(self) -> "PayoffFunction":
        fn = self.fn
        return PayoffFunction(f"-{self.name}", lambda s: -fn(s), self.arity, self.params)

    def scaled(self, factor: float) -> "PayoffFunction":
        fn = self.fn
        return PayoffFunction(f"{factor}*{self.name}", lambda s: factor * fn(s), self.arity, self.params)


def asian_call(strike: float) -> PayoffFunction:
    if strike < 0:
        raise ValueError("strike must be nonnegative")
    return PayoffFunction(
        "asian_call", lambda s: np.maximum(s.mean(axis=1) - strike, 0.0), params={"strike": strike}
    )


def terminal_call(strike: float) -> PayoffFunction:
    if strike < 0:
        raise ValueError("strike must be nonnegative")
    return PayoffFunction(
        "terminal_call", lambda s: np.maximum(s[:, -1] - strike, 0.0), params={"strike": strike}
    )


def lookback_max() -> PayoffFunction:
    return PayoffFunction("lookback_max", lambda s: s.max(axis=1))


def abs_increment(first: int = -2, last: int = -1) -> PayoffFunction:
    """``|s_last - s_first|``; indices are 1-based, negatives count from the end."""

    def col(idx):
        if idx == 0:
            raise ValueError("date indices are 1-based; 0 is not a date")
        return idx - 1 if idx > 0 else idx

    a, b = col(first), col(last)
    return PayoffFunction(
        "abs_increment", lambda s: np.abs(s[:, b] - s[:, a]), params={"first": first, "last": last}
    )


def constant(value: float) -> PayoffFunction:
    return PayoffFunction("constant", lambda s: np.full(s.shape[0], float(value)), params={"value": value})


def single_date(j: int, fn: Callable[[np.ndarray], np.ndarray], name: str = "single_date") -> PayoffFunction:
    """Payoff ``fn(s_j)`` depending on one date only."""
    return PayoffFunction(name, lambda s: fn(s[:, j - 1]), params={"j": j})


# -- tradable options -----------------------------------------------------------------

@dataclass(frozen=True)
class TradableOption:
    """European option ``v_{j,k}`` with maturity index ``j`` and label ``k``.

    ``growth`` is the constant ``c`` in ``payoff(x) <= c * (1 + x)``; ``strike``
    is set for call payoffs, which get closed-form envelopes.
    """

    maturity: int
    label: int
    payoff: Callable[[np.ndarray], np.ndarray]
    strike: Optional[float] = None
    growth: float = 1.0

    def __post_init__(self):
        if self.maturity < 1 or self.label < 1:
            raise ValueError("maturity index and label are 1-based")
        v0 = float(np.asarray(self.payoff(np.zeros(1)))[0])
        if not math.isfinite(v0):
            raise ValueError("payoff(0) must be finite")

    @property
    def is_call(self) -> bool:
        return self.strike is not None

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.payoff(np.asarray(x, dtype=float)), dtype=float)

    def check_growth(self, grid) -> bool:
        x = np.asarray(grid, dtype=float)
        return bool(np.all(self(x) <= self.growth * (1.0 + x) + 1e-12))


def call_option(maturity: int, strike: float, label: int = 1) -> TradableOption:
    if strike < 0:
        raise ValueError("strike must be nonnegative")
    return TradableOption(maturity, label, lambda x: np.maximum(x - strike, 0.0), strike=float(strike))


def active_triples(options: Sequence[TradableOption], n: int) -> list:
    """All ``(i, j, k)`` with ``1 <= i < j`` for the options maturing within ``n`` dates."""
    out = []
    for opt in options:
        if opt.maturity > n:
            raise ValueError(f"option maturity {opt.maturity} exceeds horizon {n}")
        out.extend((i, opt.maturity, opt.label) for i in range(1, opt.maturity))
    if len(set(out)) != len(out):
        raise ValueError("duplicate (maturity, label) among options")
    return sorted(out)


def options_by_key(options: Sequence[TradableOption]) -> Dict[Tuple[int, int], TradableOption]:
    return {(o.maturity, o.label): o for o in options}


# -- normal CDF and Black-Scholes -------------------------------------------------

def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def bs_price(s, strike, sigma, tau):
    """Undiscounted Black-Scholes call price; vectorized in ``s``."""
    s = np.asarray(s, dtype=float)
    if strike <= 0:
        return s.copy() if s.ndim else float(s)
    if sigma <= 0 or tau <= 0:
        out = np.maximum(s - strike, 0.0)
        return out if s.ndim else float(out)
    vol = sigma * math.sqrt(tau)
    with np.errstate(divide="ignore"):
        d1 = (np.log(s / strike) + 0.5 * vol * vol) / vol
    d2 = d1 - vol
    out = np.where(s > 0, s * normal_cdf(d1) - strike * normal_cdf(d2), 0.0)
    out = np.clip(out, np.maximum(s - strike, 0.0), s)
    return out if s.ndim else float(out)


# -- envelopes for generic payoffs ------------------------------------------------------

def _hull(x, y, upper: bool):
    """Monotone-chain hull of sampled points, upper (concave) or lower (convex) part."""
    pts = []
    sign = 1.0 if upper else -1.0
    for px, py in zip(x, y):
        while len(pts) >= 2:
            (ax, ay), (bx, by) = pts[-2], pts[-1]
            cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            if sign * cross >= 0:
                pts.pop()
            else:
                break
        pts.append((px, py))
    hx, hy = zip(*pts)
    return np.array(hx), np.array(hy)


def envelopes(payoff, s_max: float, samples: int = 2001):
    """Convex (lower) and concave (upper) envelopes of ``payoff`` on ``[0, s_max]``."""
    x = np.linspace(0.0, s_max, samples)
    y = np.asarray(payoff(x), dtype=float)
    lx, ly = _hull(x, y, upper=False)
    ux, uy = _hull(x, y, upper=True)
    return (lambda z: np.interp(z, lx, ly)), (lambda z: np.interp(z, ux, uy))


# -- pricing rules -------------------------------------------------------------------------

BandFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Band:
    """Price interval for one triple; shifts come from :func:`tighten`."""

    lower: BandFn
    upper: BandFn
    lower_shift: float = 0.0
    upper_shift: float = 0.0

    def evaluate(self, prefixes: np.ndarray):
        p = np.atleast_2d(np.asarray(prefixes, dtype=float))
        lo = np.asarray(self.lower(p), dtype=float).reshape(-1) + self.lower_shift
        hi = np.asarray(self.upper(p), dtype=float).reshape(-1) - self.upper_shift
        return lo, hi


@dataclass(frozen=True)
class PricingRule:
    """Interval pricing rule, or the unrestricted rule when ``unrestricted`` is set.

    Triples without a band are not traded dynamically.
    """

    bands: Mapping[Triple, Band] = field(default_factory=dict)
    unrestricted: bool = False
    name: str = "explicit_bands"

    @property
    def triples(self) -> list:
        return sorted(self.bands)

    def band(self, triple: Triple) -> Band:
        return self.bands[tuple(triple)]

    def evaluate(self, triple: Triple, prefixes):
        return self.band(triple).evaluate(prefixes)

    def only(self, keep) -> "PricingRule":
        """Copy keeping the triples for which ``keep(triple)`` is true."""
        if self.unrestricted:
            raise ValueError("the unrestricted rule has no bands to select")
        return replace(self, bands={t: b for t, b in self.bands.items() if keep(t)})

    def first_violation(self, supports, tol: float = 0.0):
        """First ``(triple, prefix, lower, upper)`` with ``lower > upper + tol`` on the grid, else ``None``."""
        for t in self.triples:
            prefixes = prefix_grid(supports, t[0])
            lo, hi = self.evaluate(t, prefixes)
            bad = np.nonzero(lo > hi + tol)[0]
            if bad.size:
                b = bad[0]
                return t, prefixes[b], lo[b], hi[b]
        return None


def prefix_grid(supports, length: int) -> np.ndarray:
    """All prefixes of the given length in lexicographic (mixed-radix) order."""
    if length == 0:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*supports[:length], indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def unrestricted_rule() -> PricingRule:
    return PricingRule({}, unrestricted=True, name="unrestricted")


def _last(fn):
    return lambda p: fn(p[:, -1])


def no_arbitrage_rule(options: Sequence[TradableOption], n: int, s_max: Optional[float] = None) -> PricingRule:
    """Bands ``[v^conv(s_i), v^conc(s_i)]``; for calls ``[(s_i - K)^+, s_i]``.

    Generic payoffs are enveloped numerically on ``[0, s_max]``.
    """
    bands = {}
    for t in active_triples(options, n):
        opt = options_by_key(options)[(t[1], t[2])]
        if opt.is_call:
            K = opt.strike
            bands[t] = Band(_last(lambda x, K=K: np.maximum(x - K, 0.0)), _last(lambda x: x))
            continue
        if s_max is None:
            raise ValueError("s_max is required to envelope a non-call payoff")
        grid = np.linspace(0.0, s_max, 2001)
        if not opt.check_growth(grid):
            raise ValueError(
                f"payoff of option (j={opt.maturity}, k={opt.label}) exceeds linear growth "
                f"c*(1+x) with c={opt.growth} on [0, {s_max}]"
            )
        conv, conc = envelopes(opt, s_max)
        bands[t] = Band(_last(conv), _last(conc))
    return PricingRule(bands, name="no_arbitrage")


def black_scholes_rule(sigma_hat: float, eps_vol: float, options: Sequence[TradableOption], times) -> PricingRule:
    """Bands from Black-Scholes call prices at volatilities ``sigma_hat -/+ eps_vol``.

    ``times`` lists ``t_0, ..., t_n``; the time to maturity of triple ``(i, j, k)``
    is ``t_j - t_i``.
    """
    if sigma_hat - eps_vol <= 0:
        raise ValueError(f"invalid band: sigma_hat - eps_vol = {sigma_hat - eps_vol} must be > 0")
    times = list(times)
    n = len(times) - 1
    bands = {}
    for t in active_triples(options, n):
        i, j, _ = t
        opt = options_by_key(options)[(j, t[2])]
        if not opt.is_call:
            raise ValueError("black_scholes_rule needs call options")
        tau = times[j] - times[i]
        K = opt.strike
        lo = _last(lambda x, K=K, tau=tau: bs_price(x, K, sigma_hat - eps_vol, tau))
        hi = _last(lambda x, K=K, tau=tau: bs_price(x, K, sigma_hat + eps_vol, tau))
        bands[t] = Band(lo, hi)
    return PricingRule(bands, name="black_scholes")


def explicit_rule(bands: Mapping[Triple, Tuple]) -> PricingRule:
    """Rule from per-triple ``(lower, upper)``; each side a constant or a callable of ``s_i``."""

    def as_fn(v):
        if callable(v):
            return _last(v)
        c = float(v)
        return lambda p: np.full(p.shape[0], c)

    return PricingRule({tuple(t): Band(as_fn(lo), as_fn(hi)) for t, (lo, hi) in bands.items()})


def tighten(rule: PricingRule, eps1: float = 0.0, eps2: float = 0.0) -> PricingRule:
    """Raise every lower bound by ``eps1`` and lower every upper bound by ``eps2``."""
    if rule.unrestricted:
        raise ValueError("the unrestricted rule has no interval form to tighten")
    if eps1 < 0 or eps2 < 0:
        raise ValueError("tightening amounts must be nonnegative")
    bands = {
        t: replace(b, lower_shift=b.lower_shift + eps1, upper_shift=b.upper_shift + eps2)
        for t, b in rule.bands.items()
    }
    return PricingRule(bands, name=rule.name)
