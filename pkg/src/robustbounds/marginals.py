"""Finitely supported marginal distributions, convex order and quantization."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .errors import NumericalFailure

WEIGHT_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMarginal:
    """Distribution of one asset price at one date: ``points`` with ``weights``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _frozen(np.atleast_1d(self.points))
        wts = _frozen(np.atleast_1d(self.weights))
        if pts.ndim != 1 or pts.shape != wts.shape or pts.size < 1:
            raise ValueError("points and weights must be 1-d of equal length >= 1")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(wts))):
            raise ValueError("points and weights must be finite")
        if np.any(pts < 0):
            raise ValueError("support points must be nonnegative")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("support points must be strictly increasing")
        if np.any(wts < 0):
            raise ValueError("weights must be nonnegative")
        if abs(wts.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {wts.sum():.15g}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, DiscreteMarginal):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.points.tobytes(), self.weights.tobytes()))

    @property
    def mean(self) -> float:
        return mean(self)

    def call(self, strike):
        return call_function(self, strike)


def mean(m: DiscreteMarginal) -> float:
    return float(np.dot(m.weights, m.points))


def call_function(m: DiscreteMarginal, strike):
    """E[(X - K)^+] under ``m``; vectorized over ``strike``."""
    k = np.asarray(strike, dtype=float)
    vals = np.maximum(m.points[None, :] - k.reshape(-1, 1), 0.0) @ m.weights
    return float(vals[0]) if k.ndim == 0 else vals.reshape(k.shape)


class ConvexOrderResult(NamedTuple):
    holds: bool
    witness: Optional[float]


def check_convex_order(a: DiscreteMarginal, b: DiscreteMarginal) -> ConvexOrderResult:
    """Test ``a`` precedes ``b`` in convex order.

    Call functions of finitely supported measures are piecewise linear with
    kinks on the supports, so comparing them on the union of both supports is
    exact. The witness is the first violating strike (``0.0`` when the mean of
    ``a`` exceeds that of ``b``; ``None`` when only ``-x`` separates them).
    """
    ma, mb = mean(a), mean(b)
    tol = 1e-9 * (1.0 + abs(ma))
    if ma - mb > tol:
        return ConvexOrderResult(False, 0.0)
    if mb - ma > tol:
        return ConvexOrderResult(False, None)
    strikes = np.union1d(a.points, b.points)
    excess = call_function(a, strikes) - call_function(b, strikes)
    bad = np.nonzero(excess > tol)[0]
    if bad.size:
        return ConvexOrderResult(False, float(strikes[bad[0]]))
    return ConvexOrderResult(True, None)


@dataclass(frozen=True, eq=False)
class MarginalSystem:
    """Initial price and the marginals at ``t_1..t_n``, increasing in convex order."""

    s0: float
    marginals: tuple

    def __post_init__(self):
        margs = tuple(self.marginals)
        if not margs:
            raise ValueError("need at least one marginal")
        s0 = float(self.s0)
        for i, m in enumerate(margs, start=1):
            if abs(mean(m) - s0) > 1e-9 * (1.0 + s0):
                raise ValueError(f"marginal {i} has mean {mean(m):.12g}, expected s0={s0:.12g}")
        for i in range(len(margs) - 1):
            res = check_convex_order(margs[i], margs[i + 1])
            if not res.holds:
                raise ValueError(
                    f"marginals {i + 1} and {i + 2} are not in convex order"
                    + (f" (witness strike {res.witness:.10g})" if res.witness is not None else "")
                )
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "marginals", margs)

    @property
    def n(self) -> int:
        return len(self.marginals)

    @property
    def supports(self):
        return [m.points for m in self.marginals]

    @property
    def sizes(self):
        return tuple(len(m) for m in self.marginals)

    def __getitem__(self, i):
        return self.marginals[i]

    def __iter__(self):
        return iter(self.marginals)

    def __len__(self):
        return len(self.marginals)


def merge_points(points, weights, rel_tol: float = 1e-12) -> DiscreteMarginal:
    """Sort, merge coincident points (aggregating weight) and renormalize rounding."""
    order = np.argsort(points, kind="stable")
    pts = np.asarray(points, dtype=float)[order]
    wts = np.asarray(weights, dtype=float)[order]
    out_p, out_w = [pts[0]], [wts[0]]
    for x, w in zip(pts[1:], wts[1:]):
        if x - out_p[-1] <= rel_tol * (1.0 + abs(x)):
            # keep the weighted mean so the first moment is untouched
            tot = out_w[-1] + w
            if tot > 0:
                out_p[-1] = (out_p[-1] * out_w[-1] + x * w) / tot
            out_w[-1] = tot
        else:
            out_p.append(x)
            out_w.append(w)
    out_w = np.array(out_w)
    out_w /= out_w.sum()
    return DiscreteMarginal(np.array(out_p), out_w)


def discretize(quantile: Callable[[float], float], m: int) -> DiscreteMarginal:
    """Conditional-mean quantization with ``m`` equally weighted cells.

    Point ``k`` is ``m * integral of quantile over ((k-1)/m, k/m)``. This keeps
    the mean and maps convex-ordered inputs to convex-ordered outputs.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    pts = np.empty(m)
    for k in range(m):
        lo, hi = k / m, (k + 1) / m
        # the error estimate is checked below, so scipy's own warning is redundant
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(quantile, lo, hi, epsabs=1e-12, epsrel=1e-13, limit=400)
        x = m * val
        if not np.isfinite(x) or m * err > 1e-10 * (1.0 + abs(x)):
            raise NumericalFailure(
                f"quantile integral on cell {k + 1}/{m} failed: value={x!r}, error estimate={m * err:.3g}"
            )
        pts[k] = x
    return merge_points(pts, np.full(m, 1.0 / m))


def lognormal_quantile(s0: float, total_vol: float) -> Callable[[float], float]:
    """Quantile of ``s0 * exp(total_vol * Z - total_vol**2 / 2)``, i.e. mean ``s0``."""
    if total_vol == 0:
        return lambda u: s0
    shift = -0.5 * total_vol * total_vol

    def q(u):
        return s0 * math.exp(total_vol * special.ndtri(u) + shift)

    return q


def lognormal_system(s0: float, sigma: float, times: Sequence[float], m: int) -> MarginalSystem:
    """Log-normal marginals with volatility ``sigma`` at ``times``, each quantized to ``m`` points."""
    margs = [discretize(lognormal_quantile(s0, sigma * math.sqrt(t)), m) for t in times]
    return MarginalSystem(s0, tuple(margs))


def point_mass(x: float) -> DiscreteMarginal:
    return DiscreteMarginal([x], [1.0])


# -- plain-text tabular format -------------------------------------------------

def dumps_marginals(marginals: Iterable[DiscreteMarginal]) -> str:
    buf = io.StringIO()
    for i, m in enumerate(marginals, start=1):
        buf.write(f"# marginal i={i}\n")
        for x, w in zip(m.points, m.weights):
            buf.write(f"{float(x)!r}\t{float(w)!r}\n")
    return buf.getvalue()


def loads_marginals(text: str) -> list:
    blocks = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("marginal"):
                try:
                    current = int(body.split("i=", 1)[1])
                except (IndexError, ValueError):
                    raise ValueError(f"line {lineno}: bad header {raw!r}") from None
                if current in blocks:
                    raise ValueError(f"line {lineno}: duplicate marginal index {current}")
                blocks[current] = ([], [])
            continue
        if current is None:
            raise ValueError(f"line {lineno}: data before any '# marginal i=' header")
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'price<TAB>weight'")
        blocks[current][0].append(float(parts[0]))
        blocks[current][1].append(float(parts[1]))
    if sorted(blocks) != list(range(1, len(blocks) + 1)):
        raise ValueError(f"marginal indices must be 1..n, got {sorted(blocks)}")
    return [DiscreteMarginal(*blocks[i]) for i in range(1, len(blocks) + 1)]


def write_marginals(path, marginals) -> None:
    Path(path).write_text(dumps_marginals(marginals))


def read_marginals(path) -> list:
    return loads_marginals(Path(path).read_text())
