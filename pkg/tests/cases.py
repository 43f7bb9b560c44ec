"""Scenario drivers shared by the bounds tests and the acceptance suite."""

from dataclasses import replace

import numpy as np

import instances as inst
from oracles import dense_equality_form, face_unflagged_point, lp_max_by_vertices
from robustbounds.bounds import certificate_check, upper_bound
from robustbounds.instruments import abs_increment, asian_call, call_option, lookback_max, terminal_call, tighten
from robustbounds.lpcore import MartingaleMeasure, assemble_primal

PAYOFFS = [asian_call(100), abs_increment(), lookback_max(), terminal_call(100)]
DECREASE_TOL = 1e-7


def certificate_case(rng, sizes, eps_scale):
    """One random (instance, eps) pair on a single-option two-date problem.

    Returns ``(decreased, all_flagged, info)``: whether tightening strictly
    lowers the bound, and whether every point of the looser problem's optimal
    face, enumerated by brute force, is flagged against the tightened rule.
    """
    chain = inst.random_chain(rng, sizes)
    opts = [call_option(2, float(np.round(rng.uniform(90, 110), 2)))]
    base = inst.feasible_rule(rng, chain, opts, width=4.0)
    phi = PAYOFFS[int(rng.integers(len(PAYOFFS)))]
    eps1, eps2 = rng.uniform(0, eps_scale, 2) * (rng.random(2) < 0.7)
    cand = tighten(base, eps1, eps2)

    rep = upper_bound(chain.ms, opts, base, phi)
    grid = rep.grid
    best, verts = lp_max_by_vertices(*dense_equality_form(assemble_primal(grid, phi, chain.ms)))
    assert abs(best - rep.primal) <= 1e-8 * (1 + abs(best)), (best, rep.primal)

    ids, vals, los, his = [], [], [], []
    for t in grid.triples:
        lo, hi = cand.evaluate(t, grid.prefixes(t[0]))
        ids.append(grid.prefix_id[t[0]])
        vals.append(grid.option_values[t])
        los.append(lo)
        his.append(hi)
    all_flagged = face_unflagged_point(verts, ids, vals, los, his) is None

    # the package's certificate agrees with the oracle on every optimal vertex
    for v in verts:
        if not certificate_check(replace(rep, measure=MartingaleMeasure(v)), cand).flagged:
            assert not all_flagged
    if all_flagged:
        assert certificate_check(rep, cand).flagged

    tight = upper_bound(chain.ms, opts, cand, phi, mot=rep.mot_baseline)
    decreased = tight.status == "infeasible" or tight.primal < rep.primal - DECREASE_TOL
    info = dict(scenarios=grid.n_scenarios, vertices=len(verts), status=tight.status, base=rep.primal, tight=tight.primal)
    return decreased, all_flagged, info
