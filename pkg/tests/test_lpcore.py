import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import instances as inst
from oracles import dense_equality_form, lp_max_by_vertices
from robustbounds.errors import InfeasibleRuleError
from robustbounds.instruments import (
    Band,
    PricingRule,
    abs_increment,
    asian_call,
    call_option,
    constant,
    explicit_rule,
    lookback_max,
    no_arbitrage_rule,
    prefix_grid,
    single_date,
    terminal_call,
    tighten,
    unrestricted_rule,
)
from robustbounds.lpcore import (
    HedgePortfolio,
    LinearProgram,
    MartingaleMeasure,
    assemble_dual,
    assemble_primal,
    build_grid,
    extract_hedge,
    extract_measure,
    simplex_solve,
    verify_superhedge,
)
from robustbounds.marginals import DiscreteMarginal, MarginalSystem, lognormal_system

seeds = st.integers(0, 2**32 - 1)


def tiny_ms():
    return MarginalSystem(
        100.0, (DiscreteMarginal([90, 110], [0.5, 0.5]), DiscreteMarginal([80, 100, 120], [0.25, 0.5, 0.25]))
    )


def two_by_two():
    return MarginalSystem(100.0, (DiscreteMarginal([90, 110], [0.5, 0.5]), DiscreteMarginal([80, 120], [0.5, 0.5])))


def solve(grid, phi, ms, side="primal", **kw):
    lp = assemble_primal(grid, phi, ms, **kw) if side == "primal" else assemble_dual(grid, phi, ms)
    return simplex_solve(lp)


def primal_value(ms, options, rule, phi):
    sol = solve(build_grid(ms, options, rule), phi, ms)
    return sol.objective if sol.optimal else -np.inf


# -- grid -------------------------------------------------------------------------


def test_grid_counts():
    opts = [call_option(2, 100)]
    ms = two_by_two()
    assert build_grid(ms, opts, no_arbitrage_rule(opts, 2)).n_scenarios == 8
    assert build_grid(ms, opts, unrestricted_rule()).n_scenarios == 4
    ms3 = lognormal_system(100, 0.2, [1, 2, 3], 8)
    opts3 = [call_option(2, 98), call_option(3, 98)]
    assert build_grid(ms3, opts3, no_arbitrage_rule(opts3, 3)).n_scenarios == 512 * 2**3


def test_grid_prices_at_band_endpoints():
    ms = lognormal_system(100, 0.3, [1, 2, 3], 4)
    opts = [call_option(2, 95), call_option(3, 105)]
    g = build_grid(ms, opts, tighten(no_arbitrage_rule(opts, 3), 1.0, 2.0))
    assert np.all(g.lower <= g.p) and np.all(g.p <= g.upper)
    np.testing.assert_array_equal(g.p, np.where(g.choice == 1, g.upper, g.lower))
    # every (path, endpoint pattern) appears exactly once
    keys = {(tuple(a), tuple(b)) for a, b in zip(g.path_index, g.choice)}
    assert len(keys) == g.n_scenarios


def test_unrestricted_grid_pins_prices():
    ms = tiny_ms()
    opts = [call_option(2, 100)]
    g = build_grid(ms, opts, unrestricted_rule())
    np.testing.assert_array_equal(g.p[:, 0], np.maximum(g.s[:, 1] - 100, 0))
    assert np.all(g.choice == -1)


def test_infeasible_rule_names_prefix():
    rule = explicit_rule({(1, 2, 1): (lambda s: np.where(s > 100, 30.0, 0.0), 25.0)})
    with pytest.raises(InfeasibleRuleError) as err:
        build_grid(two_by_two(), [call_option(2, 100)], rule)
    assert err.value.triple == (1, 2, 1)
    assert list(err.value.prefix) == [110.0]


def test_rule_triple_must_match_option():
    with pytest.raises(ValueError, match="does not match"):
        build_grid(two_by_two(), [call_option(2, 100)], explicit_rule({(1, 2, 2): (0.0, 1.0)}))


# -- assembly -----------------------------------------------------------------------


def test_dual_dimensions():
    opts = [call_option(2, 100)]
    ms = two_by_two()
    g = build_grid(ms, opts, no_arbitrage_rule(opts, 2))
    lp = assemble_dual(g, asian_call(100), ms)
    assert lp.n_vars == 8 and lp.n_rows == 8
    assert lp.free.all() and np.all(lp.row_sense == ">=") and lp.sense == "min"


def test_zero_payoff_value_is_zero():
    opts = [call_option(2, 100)]
    ms = two_by_two()
    g = build_grid(ms, opts, no_arbitrage_rule(opts, 2))
    zero = constant(0.0)
    assert solve(g, zero, ms, "dual").objective == pytest.approx(0, abs=1e-12)
    c, A, b = dense_equality_form(assemble_primal(g, zero, ms))
    best, _ = lp_max_by_vertices(c, A, b)
    assert best == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("rule_kind", ["no_arbitrage", "unrestricted", "tight"])
def test_terminal_price_value_is_s0(rule_kind):
    ms = lognormal_system(100, 0.25, [1, 2, 3], 5)
    opts = [call_option(2, 100), call_option(3, 95)]
    rule = {
        "no_arbitrage": no_arbitrage_rule(opts, 3),
        "unrestricted": unrestricted_rule(),
        "tight": tighten(no_arbitrage_rule(opts, 3), 0.5, 1.0),
    }[rule_kind]
    g = build_grid(ms, opts, rule)
    phi = single_date(3, lambda x: x)
    for side in ("primal", "dual"):
        sol = solve(g, phi, ms, side)
        assert abs(sol.objective - 100) <= 1e-9 * 101


def test_single_date_payoff_pins_to_marginal():
    rng = np.random.default_rng(5)
    ms = lognormal_system(100, 0.3, [1, 2, 3], 4)
    opts = [call_option(3, 100)]
    g = build_grid(ms, opts, no_arbitrage_rule(opts, 3))
    for j in (1, 2, 3):
        vals = rng.normal(size=4)
        phi = single_date(j, lambda x, pts=ms[j - 1].points, v=vals: np.interp(x, pts, v))
        assert solve(g, phi, ms).objective == pytest.approx(vals @ ms[j - 1].weights, abs=1e-9 * 101)


def test_tiny_abs_increment_matches_vertex_oracle():
    ms = tiny_ms()
    g = build_grid(ms, [], unrestricted_rule())
    lp = assemble_primal(g, abs_increment(), ms)
    best, argmax = lp_max_by_vertices(*dense_equality_form(lp))
    sol = simplex_solve(lp)
    assert sol.objective == pytest.approx(best, abs=1e-10)
    q = extract_measure(g, sol)
    assert q.check(g, ms)
    assert q.expectation(g, abs_increment()) == pytest.approx(best, abs=1e-10)
    # the oracle's maximizers are optimal measures too
    for w in argmax:
        assert MartingaleMeasure(w).check(g, ms)


# -- simplex on hand-sized problems ------------------------------------------------


def lp_from_dense(sense, c, A, senses, b, free=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    r, cc = np.nonzero(A)
    return LinearProgram(sense, c, r, cc, A[r, cc], senses, b, free if free is not None else np.zeros(len(c), bool))


def test_simplex_examples():
    assert simplex_solve(lp_from_dense("max", [1.0], [[1.0]], ["<="], [3.0])).objective == pytest.approx(3)
    sol = simplex_solve(lp_from_dense("max", [1.0, 1.0], [[1.0, 1.0]], ["<="], [1.0]))
    assert sol.objective == pytest.approx(1) and sol.x.sum() == pytest.approx(1)
    assert simplex_solve(lp_from_dense("max", [1.0], [[1.0]], ["<="], [-1.0])).status == "infeasible"
    assert simplex_solve(lp_from_dense("max", [1.0], [[-1.0]], ["<="], [1.0])).status == "unbounded"


def test_linear_program_validation():
    with pytest.raises(ValueError):
        lp_from_dense("maximize", [1.0], [[1.0]], ["<="], [1.0])
    with pytest.raises(ValueError):
        lp_from_dense("max", [np.nan], [[1.0]], ["<="], [1.0])
    with pytest.raises(ValueError):
        lp_from_dense("max", [1.0], [[1.0]], ["<"], [1.0])
    with pytest.raises(ValueError):
        LinearProgram("max", [1.0], [0], [3], [1.0], ["<="], [1.0], [False])


# -- extraction -----------------------------------------------------------------------


def test_terminal_price_hedge():
    ms = tiny_ms()
    opts = [call_option(2, 100)]
    g = build_grid(ms, opts, no_arbitrage_rule(opts, 2))
    phi = single_date(2, lambda x: x)
    h = extract_hedge(g, solve(g, phi, ms, "dual"))
    assert h.cost == pytest.approx(100, abs=1e-9)
    assert h.static_cost(ms) == pytest.approx(h.cost, abs=1e-9)
    assert verify_superhedge(h, g, phi) >= -1e-7
    # the textbook hedge: hold the terminal marginal's identity payoff
    plain = HedgePortfolio([np.zeros(2), ms[1].points.copy()], [np.zeros(2)], {(1, 2, 1): np.zeros(2)}, 100.0)
    assert plain.static_cost(ms) == pytest.approx(100)
    assert verify_superhedge(plain, g, phi) == pytest.approx(0, abs=1e-12)


def test_verify_superhedge_examples():
    ms = tiny_ms()
    opts = [call_option(2, 100)]
    g = build_grid(ms, opts, no_arbitrage_rule(opts, 2))
    zero = HedgePortfolio([np.zeros(2), np.zeros(3)], [np.zeros(2)], {}, 0.0)
    assert verify_superhedge(zero, g, constant(1.0)) == -1.0
    phi = asian_call(95)
    h = extract_hedge(g, solve(g, phi, ms, "dual"))
    assert verify_superhedge(h, g, phi) >= -1e-7 * (1 + abs(h.cost))
    delta = 0.37
    bumped = HedgePortfolio([u.copy() for u in h.u], h.H, h.H_option, h.cost)
    bumped.u[1][2] -= delta
    through = g.path_index[:, 1] == 2
    diff = bumped.value(g) - h.value(g)
    np.testing.assert_allclose(diff[through], -delta, atol=1e-12)
    np.testing.assert_allclose(diff[~through], 0, atol=1e-12)
    slack = h.value(g) - phi(g.s)
    assert verify_superhedge(bumped, g, phi) == pytest.approx(min(-delta + slack[through].min(), slack[~through].min()))


def test_extraction_refuses_non_optimal():
    lp = lp_from_dense("max", [1.0], [[1.0]], ["<="], [-1.0])
    sol = simplex_solve(lp)
    g = build_grid(two_by_two(), [], unrestricted_rule())
    with pytest.raises(ValueError, match="infeasible"):
        extract_hedge(g, sol)
    with pytest.raises(ValueError, match="infeasible"):
        extract_measure(g, sol)


# -- properties on random instances ---------------------------------------------------


def random_instance(seed, n=None, max_opts=2):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 4))
    sizes = [int(rng.integers(2, 5)) for _ in range(n)]
    chain = inst.random_chain(rng, sizes)
    opts = inst.random_options(rng, n, int(rng.integers(1, max_opts + 1)))
    return rng, chain, opts


PAYOFFS = [asian_call(100), lookback_max(), abs_increment(), terminal_call(105)]


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_strong_duality_and_certificates(seed):
    rng, chain, opts = random_instance(seed)
    rule = inst.feasible_rule(rng, chain, opts)
    phi = PAYOFFS[seed % len(PAYOFFS)]
    g = build_grid(chain.ms, opts, rule)
    p = solve(g, phi, chain.ms)
    d = solve(g, phi, chain.ms, "dual")
    assert p.optimal and d.optimal
    assert abs(p.objective - d.objective) <= 1e-6 * (1 + abs(p.objective))
    q = extract_measure(g, p)
    assert q.check(g, chain.ms)
    h = extract_hedge(g, d)
    assert abs(h.static_cost(chain.ms) - h.cost) <= 1e-9 * (1 + abs(h.cost))
    assert verify_superhedge(h, g, phi) >= -1e-7 * (1 + abs(h.cost))


def table_band(supports, length, values):
    """Band side looked up by exact prefix, for per-prefix values in mixed-radix order."""
    table = {tuple(row): v for row, v in zip(prefix_grid(supports, length), values)}
    return lambda p: np.array([table[tuple(row)] for row in p])


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_feasibility_from_unrestricted_optimizer(seed):
    rng, chain, opts = random_instance(seed)
    phi = PAYOFFS[seed % len(PAYOFFS)]
    ug = build_grid(chain.ms, opts, unrestricted_rule())
    q = extract_measure(ug, solve(ug, phi, chain.ms))
    bands = {}
    for t in ug.triples:
        _, cond = q.conditional_prices(ug, t)
        cond = np.where(np.isnan(cond), 0.0, cond)
        lo = np.maximum(cond - rng.uniform(0, 3, cond.size), 0)
        hi = cond + rng.uniform(0, 3, cond.size)
        bands[t] = Band(table_band(chain.supports, t[0], lo), table_band(chain.supports, t[0], hi))
    assert solve(build_grid(chain.ms, opts, PricingRule(bands)), phi, chain.ms).optimal


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_monotone_in_rule(seed):
    rng, chain, opts = random_instance(seed)
    inner = inst.feasible_rule(rng, chain, opts, width=2.0)
    outer_bands = {}
    for t in inner.triples:
        b = inner.band(t)
        extra_lo, extra_hi = rng.uniform(0, 4, 2)
        outer_bands[t] = (
            lambda s, b=b, e=extra_lo: np.maximum(b.lower(s[:, None]) - e, 0),
            lambda s, b=b, e=extra_hi: b.upper(s[:, None]) + e,
        )
    outer = explicit_rule(outer_bands)
    phi = PAYOFFS[seed % len(PAYOFFS)]
    assert primal_value(chain.ms, opts, inner, phi) <= primal_value(chain.ms, opts, outer, phi) + 1e-8


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_adding_a_triple_never_increases(seed):
    rng, chain, opts = random_instance(seed, n=3, max_opts=2)
    full = inst.feasible_rule(rng, chain, opts)
    phi = PAYOFFS[seed % len(PAYOFFS)]
    triples = full.triples
    prev = primal_value(chain.ms, opts, full.only(lambda t: False), phi)
    for k in range(1, len(triples) + 1):
        keep = set(triples[:k])
        val = primal_value(chain.ms, opts, full.only(lambda t: t in keep), phi)
        assert val <= prev + 1e-8
        prev = val


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_unrestricted_equals_mot(seed):
    rng, chain, opts = random_instance(seed)
    phi = PAYOFFS[seed % len(PAYOFFS)]
    g = build_grid(chain.ms, opts, unrestricted_rule())
    with_rows = solve(g, phi, chain.ms).objective
    mot = solve(g, phi, chain.ms, include_options=False).objective
    assert abs(with_rows - mot) <= 1e-8 * (1 + abs(mot))


@settings(max_examples=10, deadline=None)
@given(seeds, st.floats(0.1, 10.0))
def test_scaling_equivariance(seed, lam):
    rng = np.random.default_rng(seed)
    chain = inst.random_chain(rng, [3, 4])
    scaled_ms = MarginalSystem(100 * lam, tuple(DiscreteMarginal(m.points * lam, m.weights) for m in chain.ms))
    K, lo, hi = 100.0, rng.uniform(0, 3), rng.uniform(0, 3)
    c = chain.conditional(1, 2, lambda x: np.maximum(x - K, 0))
    x = chain.supports[0]

    def rule(scale):
        return explicit_rule({(1, 2, 1): (
            lambda s: scale * np.maximum(np.interp(s / scale, x, c) - lo, 0),
            lambda s: scale * (np.interp(s / scale, x, c) + hi),
        )})

    base = primal_value(chain.ms, [call_option(2, K)], rule(1.0), asian_call(100))
    scaled = primal_value(scaled_ms, [call_option(2, K * lam)], rule(lam), asian_call(100 * lam))
    assert scaled == pytest.approx(lam * base, rel=1e-7, abs=1e-9)
