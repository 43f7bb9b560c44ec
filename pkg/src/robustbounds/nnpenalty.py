"""Penalized neural-network estimate of the super-hedging value.

Every hedge component (static payoffs ``u_i``, stock holdings ``H_i`` and
option holdings ``H_{i,j,k}``) is a small ReLU network. The super-replication
constraint is replaced by a quadratic penalty on sampled violations and the
resulting loss is minimized with Adam. Everything is plain numpy with
hand-written backpropagation.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericalFailure
from .instruments import PricingRule, options_by_key
from .marginals import MarginalSystem

log = logging.getLogger(__name__)


class Mlp:
    """Feedforward net, ReLU on hidden layers and identity output.

    Parameters live in one flat vector (``params``); ``layers()`` returns
    ``(W, b)`` views with ``W`` of shape ``(fan_in, fan_out)``.
    """

    def __init__(self, widths: Sequence[int], params: Optional[np.ndarray] = None):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"bad layer widths {self.widths}")
        self.size = sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))
        if params is None:
            params = np.zeros(self.size)
        if params.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got shape {params.shape}")
        self.params = params

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        out, k = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            W = self.params[k : k + a * b].reshape(a, b)
            k += a * b
            out.append((W, self.params[k : k + b]))
            k += b
        return out

    def init(self, rng: np.random.Generator, zero_output: bool = True) -> "Mlp":
        """He-normal hidden weights, zero biases; the output layer starts at zero so the net starts at 0."""
        layers = self.layers()
        for idx, (W, b) in enumerate(layers):
            last = idx == len(layers) - 1
            W[...] = 0.0 if (last and zero_output) else rng.normal(0.0, math.sqrt(2.0 / W.shape[0]), W.shape)
            b[...] = 0.0
        return self

    def copy(self) -> "Mlp":
        return Mlp(self.widths, self.params.copy())

    def run(self, X: np.ndarray):
        """Outputs of a batch ``X`` (shape ``(B, in)``) plus the activations needed by :meth:`backward`."""
        acts = [X]
        h = X
        layers = self.layers()
        for idx, (W, b) in enumerate(layers):
            h = h @ W + b
            if idx < len(layers) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h[:, 0] if self.widths[-1] == 1 else h, acts

    def backward(self, acts, g_out: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given ``d loss / d output`` per sample."""
        grad = np.zeros(self.size)
        g = g_out.reshape(acts[-1].shape)
        layers = self.layers()
        offsets = np.cumsum([0] + [(a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:])])
        for idx in range(len(layers) - 1, -1, -1):
            W, _ = layers[idx]
            a_in = acts[idx]
            k = offsets[idx]
            grad[k : k + W.size] = (a_in.T @ g).ravel()
            grad[k + W.size : k + W.size + W.shape[1]] = g.sum(axis=0)
            if idx:
                # subgradient 0 on the inactive side of each kink
                g = (g @ W.T) * (a_in > 0)
        return grad


def forward(net: Mlp, x) -> float | np.ndarray:
    """Single input vector gives a scalar; a 2-d batch gives one output per row."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != net.widths[0]:
        raise ValueError(f"input length {X.shape[1]} does not match first layer width {net.widths[0]}")
    out, _ = net.run(X)
    return float(out[0]) if single else out


# -- Adam ----------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; advances ``state`` and returns the new parameters."""
    if state.m.shape != params.shape or grad.shape != params.shape:
        raise ValueError("Adam state, parameters and gradient must share a shape")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- hedge model ---------------------------------------------------------------------


class HedgeModel:
    """All hedge networks of one problem sharing a flat parameter vector.

    Prices, payoffs and option prices are measured in units of ``s0`` inside
    the networks and the penalty, so ``gamma`` acts on shortfalls relative to
    the spot; losses are reported back in price units. Network inputs are the
    centred prefix ``x / s0 - 1``.
    """

    def __init__(self, n: int, triples: Sequence[tuple], s0: float, hidden: Sequence[int], params=None):
        self.n = n
        self.triples = [tuple(t) for t in triples]
        self.s0 = float(s0)
        self.hidden = tuple(hidden)
        shapes = [("u", i, 1) for i in range(n)] + [("H", i, i) for i in range(1, n)] + [("Ho", t, t[0]) for t in self.triples]
        sizes = [Mlp((d, *self.hidden, 1)).size for *_, d in shapes]
        self.size = int(sum(sizes))
        self.params = np.zeros(self.size) if params is None else params
        self.nets: Dict[tuple, Mlp] = {}
        k = 0
        for (kind, key, d), sz in zip(shapes, sizes):
            self.nets[(kind, key)] = Mlp((d, *self.hidden, 1), self.params[k : k + sz])
            k += sz

    def init(self, rng: np.random.Generator) -> "HedgeModel":
        for net in self.nets.values():
            net.init(rng)
        return self

    def with_params(self, params: np.ndarray) -> "HedgeModel":
        return HedgeModel(self.n, self.triples, self.s0, self.hidden, params)

    def _pass(self, batch: "Batch"):
        x = batch.x / self.s0
        z = x - 1.0
        static = np.zeros(x.shape[0])
        trade = np.zeros(x.shape[0])
        parts = []
        for i in range(self.n):
            out, acts = self.nets[("u", i)].run(z[:, i : i + 1])
            static += out
            parts.append((("u", i), acts, None))
        for i in range(1, self.n):
            out, acts = self.nets[("H", i)].run(z[:, :i])
            dx = x[:, i] - x[:, i - 1]
            trade += out * dx
            parts.append((("H", i), acts, dx))
        for c, t in enumerate(self.triples):
            out, acts = self.nets[("Ho", t)].run(z[:, : t[0]])
            dv = (batch.v[:, c] - batch.p[:, c]) / self.s0
            trade += out * dv
            parts.append((("Ho", t), acts, dv))
        return static, static + trade, parts

    def hedge_value(self, batch: "Batch") -> np.ndarray:
        """Strategy payoff per sample, in price units."""
        return self.s0 * self._pass(batch)[1]

    def evaluate(self, batch: "Batch", phi_values: np.ndarray, gamma: float, with_grad: bool = False):
        """Penalized loss on ``batch``; with ``with_grad`` also its gradient in ``params``."""
        B = batch.x.shape[0]
        static, psi, parts = self._pass(batch)
        viol = np.maximum(phi_values / self.s0 - psi, 0.0)
        loss = self.s0 * float(static.mean() + 0.5 * gamma * np.mean(viol * viol))
        if not with_grad:
            return loss
        g_psi = -self.s0 * gamma * viol / B
        grad = np.zeros(self.size)
        k = 0
        for key, acts, mult in parts:
            net = self.nets[key]
            g_out = self.s0 / B + g_psi if mult is None else g_psi * mult
            grad[k : k + net.size] = net.backward(acts, g_out)
            k += net.size
        return loss, grad


def gradient(model: HedgeModel, batch: "Batch", phi_values: np.ndarray, gamma: float) -> np.ndarray:
    """Exact reverse-mode gradient of the penalized loss in the flat parameter vector."""
    return model.evaluate(batch, phi_values, gamma, with_grad=True)[1]


def penalized_loss(model: HedgeModel, batch: "Batch", phi_values: np.ndarray, gamma: float) -> float:
    """Mean static cost plus ``gamma / 2`` times the mean squared per-sample shortfall."""
    return model.evaluate(batch, phi_values, gamma)


# -- sampling ------------------------------------------------------------------------


@dataclass
class Batch:
    x: np.ndarray  # (B, n) prices
    p: np.ndarray  # (B, T) option prices, one of the band endpoints
    v: np.ndarray  # (B, T) option payoffs at maturity
    triples: list


def sample_batch(ms: MarginalSystem, options, rule: PricingRule, size: int, rng: np.random.Generator) -> Batch:
    """Independent draws from each marginal; each option price is a fair coin between the band ends."""
    if rule.unrestricted:
        raise ValueError("sampling needs an interval pricing rule")
    cols = []
    for m in ms.marginals:
        cdf = np.cumsum(m.weights)
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        cols.append(m.points[np.minimum(idx, len(m) - 1)])
    x = np.stack(cols, axis=1)
    triples = rule.triples
    opts = options_by_key(options)
    p = np.zeros((size, len(triples)))
    v = np.zeros((size, len(triples)))
    coin = rng.integers(0, 2, size=(size, len(triples)))
    for c, t in enumerate(triples):
        lo, hi = rule.evaluate(t, x[:, : t[0]])
        p[:, c] = np.where(coin[:, c] == 1, hi, lo)
        v[:, c] = opts[(t[1], t[2])](x[:, t[1] - 1])
    return Batch(x, p, v, triples)


# -- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    iterations: int = 5000
    gamma: float = 1e4
    seed: int = 0
    hidden: Tuple[int, ...] = (32, 32)
    window: float = 0.05
    runs: int = 5
    lr: float = 1e-3

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1 or self.runs < 1:
            raise ValueError("batch_size, iterations and runs must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.window <= 1:
            raise ValueError("window must lie in (0, 1]")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def large_scale(cls, n: int, **kw) -> "TrainConfig":
        """Five hidden layers of 64n units, batch 2^(10+n), 50000 iterations, 30 runs."""
        base = dict(batch_size=2 ** (10 + n), iterations=50000, hidden=(64 * n,) * 5, runs=30)
        base.update(kw)
        return cls(**base)


@dataclass
class TrainResult:
    estimate: float
    run_estimates: List[float]
    history: np.ndarray  # (runs, iterations)
    config: TrainConfig
    seeds: List[int] = field(default_factory=list)

    @property
    def stderr(self) -> float:
        r = np.asarray(self.run_estimates)
        return float(r.std(ddof=1) / math.sqrt(r.size)) if r.size > 1 else float("nan")

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for it, val in enumerate(self.history.mean(axis=0)):
            w.writerow([it, repr(float(val))])
        return buf.getvalue()

    def record(self) -> dict:
        return {
            "estimate": self.estimate,
            "run_estimates": list(self.run_estimates),
            "stderr": self.stderr,
            "seeds": list(self.seeds),
            "config": asdict(self.config),
        }


def train_once(ms: MarginalSystem, options, rule: PricingRule, phi, cfg: TrainConfig, seed: int):
    """One seeded run; returns ``(estimate, loss history, trained model)``."""
    rng = np.random.default_rng(seed)
    model = HedgeModel(ms.n, rule.triples, ms.s0, cfg.hidden).init(rng)
    state = AdamState.fresh(model.size, lr=cfg.lr)
    hist = np.empty(cfg.iterations)
    params = model.params
    for it in range(cfg.iterations):
        batch = sample_batch(ms, options, rule, cfg.batch_size, rng)
        loss, grad = model.evaluate(batch, phi(batch.x), cfg.gamma, with_grad=True)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalFailure(
                f"non-finite loss or gradient at iteration {it} (seed {seed}, loss {loss!r}, "
                f"max |param| {np.abs(params).max():.3g})"
            )
        hist[it] = loss
        params = adam_step(state, params, grad)
        model = model.with_params(params)
    window = max(1, int(math.ceil(cfg.window * cfg.iterations)))
    return float(hist[-window:].mean()), hist, model


def train(ms: MarginalSystem, options, rule: PricingRule, phi, cfg: TrainConfig = TrainConfig(), threads: int = 1) -> TrainResult:
    """Average of ``cfg.runs`` independent runs; deterministic in ``cfg.seed``."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.runs)]

    def one(seed):
        est, hist, _ = train_once(ms, options, rule, phi, cfg, seed)
        log.info("seed %d: estimate %.6g", seed, est)
        return est, hist

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, seeds))
    else:
        out = [one(s) for s in seeds]
    ests = [e for e, _ in out]
    return TrainResult(float(np.mean(ests)), ests, np.stack([h for _, h in out]), cfg, seeds)
