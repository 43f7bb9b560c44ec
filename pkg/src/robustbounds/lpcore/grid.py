"""Enumeration of admissible (price path, option price) scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from ..errors import InfeasibleRuleError
from ..instruments import PricingRule, TradableOption, active_triples, options_by_key, prefix_grid

Triple = Tuple[int, int, int]


@dataclass(eq=False)
class ScenarioGrid:
    """Scenarios ordered path-major, then by the endpoint bits of the active triples.

    ``prefix_id[i]`` (``i = 0..n``) gives, per scenario, the index of its price
    prefix of length ``i`` in mixed-radix order over the supports.
    """

    supports: list
    triples: list
    option_values: Dict[Triple, np.ndarray]  # v_{j,k}(s_j) per scenario
    path_index: np.ndarray  # (S, n) support indices
    s: np.ndarray  # (S, n) prices
    p: np.ndarray  # (S, T) option prices per triple
    choice: np.ndarray  # (S, T): 0 lower, 1 upper, -1 pinned to the payoff
    lower: np.ndarray  # (S, T) band at the scenario prefix
    upper: np.ndarray
    prefix_id: list
    unrestricted: bool

    @property
    def n(self) -> int:
        return len(self.supports)

    @property
    def sizes(self):
        return tuple(len(x) for x in self.supports)

    @property
    def n_scenarios(self) -> int:
        return self.s.shape[0]

    def n_prefixes(self, length: int) -> int:
        return int(np.prod(self.sizes[:length], dtype=np.int64))

    def prefixes(self, length: int) -> np.ndarray:
        return prefix_grid(self.supports, length)

    def triple_column(self, triple: Triple) -> int:
        return self.triples.index(tuple(triple))


def _support_list(ms):
    if hasattr(ms, "supports"):
        return [np.asarray(x, dtype=float) for x in ms.supports]
    return [np.asarray(x, dtype=float) for x in ms]


def build_grid(ms, options: Sequence[TradableOption], rule: PricingRule) -> ScenarioGrid:
    """Cartesian product of the supports, times ``{lower, upper}`` per active triple.

    Both endpoints suffice because every constraint is affine in the option
    price and aggregates over prices within a prefix. Under the unrestricted
    rule the price is pinned to the realized payoff instead.
    ``ms`` is a :class:`MarginalSystem` or a list of support arrays.
    """
    supports = _support_list(ms)
    n = len(supports)
    sizes = [len(x) for x in supports]
    paths = prefix_grid(supports, n)
    idx = np.stack(np.meshgrid(*[np.arange(k) for k in sizes], indexing="ij"), axis=-1).reshape(-1, n)
    n_paths = paths.shape[0]

    opts = options_by_key(options)
    if rule.unrestricted:
        triples = active_triples(options, n)
    else:
        triples = sorted(rule.triples)
        for t in triples:
            if t[1] > n or (t[1], t[2]) not in opts or not 1 <= t[0] < t[1]:
                raise ValueError(f"rule triple {t} does not match a tradable option within horizon {n}")
    T = len(triples)

    # prefix ids of each path, mixed radix
    path_prefix = [np.zeros(n_paths, dtype=np.int64)]
    for i in range(1, n + 1):
        path_prefix.append(path_prefix[-1] * sizes[i - 1] + idx[:, i - 1])

    v_path = {t: opts[(t[1], t[2])](paths[:, t[1] - 1]) for t in triples}
    lo_path = np.zeros((n_paths, T))
    hi_path = np.zeros((n_paths, T))
    if rule.unrestricted:
        for c, t in enumerate(triples):
            lo_path[:, c] = hi_path[:, c] = v_path[t]
    else:
        for c, t in enumerate(triples):
            i = t[0]
            pref = prefix_grid(supports, i)
            lo, hi = rule.evaluate(t, pref)
            bad = np.nonzero(lo > hi)[0]
            if bad.size:
                b = bad[0]
                raise InfeasibleRuleError(t, pref[b], lo[b], hi[b])
            lo_path[:, c] = lo[path_prefix[i]]
            hi_path[:, c] = hi[path_prefix[i]]

    if rule.unrestricted or T == 0:
        reps = 1
        bits = np.zeros((1, T), dtype=np.int64)
    else:
        reps = 2**T
        bits = (np.arange(reps)[:, None] >> np.arange(T - 1, -1, -1)[None, :]) & 1

    pi = np.repeat(np.arange(n_paths), reps)
    bit_rows = np.tile(bits, (n_paths, 1))
    lower = lo_path[pi]
    upper = hi_path[pi]
    if rule.unrestricted:
        p = lower.copy()
        choice = -np.ones_like(bit_rows)
    else:
        p = np.where(bit_rows == 1, upper, lower)
        choice = bit_rows
    return ScenarioGrid(
        supports=supports,
        triples=triples,
        option_values={t: v_path[t][pi] for t in triples},
        path_index=idx[pi],
        s=paths[pi],
        p=p,
        choice=choice,
        lower=lower,
        upper=upper,
        prefix_id=[pp[pi] for pp in path_prefix],
        unrestricted=rule.unrestricted,
    )
