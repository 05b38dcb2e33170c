import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbpsc.exact_mdp import build_exact_primal, solve_exact
from rbpsc.instance import generate_random_instance
from rbpsc.relaxation import (FAMILIES, MarginalKey, RelaxationLayout, RelaxationSolution,
                              RowIndex, build_relaxation, reduced_cost_recompute,
                              solve_relaxation, verify_marginal_feasibility)

from conftest import single_site, small_instances


def count_keys(sizes):
    """Oracle: enumerate (agent, anchor, state, from, to) with s == a counted once."""
    n = len(sizes)
    keys = set()
    for i, s, a in itertools.product(range(n), repeat=3):
        keys |= {(i, s, a, "o", x) for x in range(sizes[s])}
        if s != a:
            keys |= {(i, s, a, "d", x) for x in range(sizes[a])}
    return len(keys)


def test_variable_count():
    lay = RelaxationLayout((3, 3, 3, 3))
    assert lay.n_vars == 336 == count_keys((3,) * 4) == 2 * 64 * 3 - 16 * 3
    assert RelaxationLayout((2, 3, 1)).n_vars == count_keys((2, 3, 1))


def test_st1_row_count():
    lo, hi = RowIndex((2, 2, 2)).family_ranges["st1"]
    assert hi - lo == 6


def test_canonical_key():
    lay = RelaxationLayout((2, 2))
    k = MarginalKey(0, "destination", 1, 1, 1)
    assert lay.index(k) == lay.index(k._replace(anchor="origin"))
    with pytest.raises(KeyError):
        lay.index(MarginalKey(0, "origin", 5, 0, 1))


def test_single_site_matches_exact_model():
    inst = generate_random_instance(4, 1, 1, 3, discount=0.7)
    rel_model = build_relaxation(inst)
    ex_model = build_exact_primal(inst)
    lay = RelaxationLayout.for_instance(inst)
    order = lay.orig_idx[0, 0, 0, :3]
    np.testing.assert_allclose(rel_model.objective[order], ex_model.objective)
    lo, hi = RowIndex(lay.sizes).family_ranges["st0"]
    np.testing.assert_allclose(rel_model.matrix[lo:hi][:, order].toarray(),
                               ex_model.matrix.toarray())
    np.testing.assert_allclose(rel_model.rhs[lo:hi], ex_model.rhs)
    assert solve_relaxation(inst).objective == pytest.approx(solve_exact(inst).optimal_value)


def test_single_state_site():
    rel = solve_relaxation(single_site())
    assert rel.objective == pytest.approx(2.0)
    np.testing.assert_allclose(rel.reduced_costs, 0.0, atol=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_upper_bound_on_three_sites(seed):
    inst = generate_random_instance(seed, 3, 1, 2, discount=0.8)
    assert solve_relaxation(inst).objective >= solve_exact(inst).optimal_value - 1e-6


@given(small_instances())
def test_upper_bound(inst):
    assert solve_relaxation(inst).objective >= solve_exact(inst).optimal_value - 1e-6


@given(small_instances(max_sites=4, max_states=2))
def test_reduced_costs_closed_form(inst):
    rel = solve_relaxation(inst)
    got = np.array([reduced_cost_recompute(rel, k) for k in rel.layout.keys])
    np.testing.assert_allclose(got, rel.reduced_costs, atol=1e-6)
    assert rel.reduced_costs.min() >= -1e-7
    assert np.all(got[rel.rho > 1e-6] <= 1e-6)


def test_optimal_marginals_feasible(random_small):
    for inst in random_small:
        rel = solve_relaxation(inst)
        res = verify_marginal_feasibility(inst, rel.rho_bar)
        assert set(res) == set(FAMILIES) | {"nonneg"}
        assert max(res.values()) <= 1e-7


def test_checker_agrees_with_model_matrix(random_small):
    rng = np.random.default_rng(0)
    for inst in random_small:
        model = build_relaxation(inst)
        rows = RowIndex(inst.state_sizes)
        v = rng.random(model.n_vars)
        resid = np.abs(model.matrix @ v - model.rhs)
        res = verify_marginal_feasibility(inst, v)
        for fam in FAMILIES:
            lo, hi = rows.family_ranges[fam]
            assert res[fam] == pytest.approx(resid[lo:hi].max(), rel=1e-9, abs=1e-12)


def test_zero_marginals():
    inst = generate_random_instance(2, 3, 2, 2, deterministic_init=False, discount=0.6)
    lay = RelaxationLayout.for_instance(inst)
    res = verify_marginal_feasibility(inst, np.zeros(lay.n_vars))
    nu_max = max(s.initial_dist.max() for s in inst.sites)
    assert res["st0"] == pytest.approx((1 - inst.discount) * nu_max)
    assert all(res[f] == 0 for f in ("compat", "st1", "st2", "st3", "nonneg"))


def test_multiplier_shapes():
    inst = generate_random_instance(1, 3, 2, [2, 3, 1])
    rel = solve_relaxation(inst)
    assert rel.lam.shape == (3, 3, 3)
    assert rel.mu.shape == (3, 3, 3) and np.all(rel.mu[:, [0, 1, 2], [0, 1, 2]] == 0)
    assert rel.kappa.shape == (3, 3) and rel.zeta.shape == (3, 3) and rel.xi.shape == (3, 3)


def test_passive_multipliers_are_label_free():
    inst = generate_random_instance(9, 4, 1, 2, discount=0.8)
    rel = solve_relaxation(inst)
    np.testing.assert_allclose(rel.lam[2], rel.lam[1], atol=1e-12)
    np.testing.assert_allclose(rel.lam[3], rel.lam[1], atol=1e-12)


def test_save_load(tmp_path):
    inst = generate_random_instance(3, 3, 2, 2)
    rel = solve_relaxation(inst)
    path = tmp_path / "rel.json"
    rel.save(path)
    back = RelaxationSolution.load(path, inst)
    np.testing.assert_array_equal(back.duals, rel.duals)
    assert back.objective == rel.objective
    with pytest.raises(ValueError):
        RelaxationSolution.load(path, generate_random_instance(4, 3, 2, 2))


@pytest.mark.parametrize("rule", ["vertex", "symmetric", "min_lambda"])
def test_every_dual_rule_gives_an_optimal_dual(rule):
    inst = generate_random_instance(12, 4, 2, 2, discount=0.9)
    model = build_relaxation(inst)
    rel = solve_relaxation(inst, model, duals=rule)
    # dual feasibility of a maximisation with v >= 0 and equality rows, plus a zero gap
    assert rel.reduced_costs.min() >= -1e-7
    assert model.rhs @ rel.duals == pytest.approx(rel.lp_objective, abs=1e-7)
    assert rel.rho @ rel.reduced_costs == pytest.approx(0.0, abs=1e-7)


@given(small_instances(max_sites=4, max_states=2))
def test_selected_dual_minimises_lambda_total(inst):
    # passive-symmetric optimal duals are exactly the candidates of the selection
    low = solve_relaxation(inst, duals="min_lambda").lam.sum()
    assert low <= solve_relaxation(inst, duals="symmetric").lam.sum() + 1e-6


def test_unknown_dual_rule():
    with pytest.raises(ValueError):
        solve_relaxation(single_site(), duals="interior")
