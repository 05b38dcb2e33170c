import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbpsc.exact_mdp import JointIndexer
from rbpsc.instance import ProblemInstance, SiteModel, generate_random_instance
from rbpsc.policies import (PolicySpec, ScoreMatrix, greedy_action, hungarian, immediate_scores,
                            make_policy, osl_action, osl_scores, pd_action, pd_index, pd_scores)
from rbpsc.relaxation import solve_relaxation
from rbpsc.suites import suite_by_name

from conftest import small_instances


def brute_force(m, maximize=True):
    """Lexicographically first optimal permutation by full enumeration."""
    n = len(m)
    best, arg = None, None
    for p in itertools.permutations(range(n)):
        v = sum(m[i][p[i]] for i in range(n))
        if best is None or (v > best if maximize else v < best):
            best, arg = v, p
    return arg, best


def test_small_assignment():
    assert hungarian([[1, 2], [2, 4]]) == ((0, 1), 5.0)


def test_identity_dominant():
    m = np.random.default_rng(0).random((7, 7)) + 100 * np.eye(7)
    assert hungarian(m)[0] == tuple(range(7))


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        hungarian(np.ones((2, 3)))
    with pytest.raises(ValueError):
        hungarian([[1.0, np.nan], [0.0, 1.0]])


@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.booleans(), st.booleans())
def test_matches_enumeration(n, seed, maximize, ties):
    rng = np.random.default_rng(seed)
    m = rng.integers(0, 3, (n, n)) if ties else rng.normal(size=(n, n))
    perm, val = hungarian(ScoreMatrix(m, maximize))
    arg, best = brute_force(m.tolist(), maximize)
    assert val == pytest.approx(best, abs=1e-9)
    if ties:
        # integer scores: optima are exact, so the tie-break is checkable
        assert perm == arg


def test_total_tie_is_identity():
    assert hungarian(np.zeros((5, 5)), maximize=False)[0] == (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def solved():
    inst = generate_random_instance(12, 3, 2, 2, discount=0.8)
    return inst, solve_relaxation(inst)


def test_zero_duals_give_greedy_scores(solved):
    inst, rel = solved
    zero = replace(rel, duals=np.zeros_like(rel.duals))
    for x in itertools.product(range(2), repeat=3):
        for s in itertools.permutations(range(3)):
            np.testing.assert_allclose(osl_scores(inst, zero, x, s).entries,
                                       immediate_scores(inst, x, s))
            assert osl_action(inst, zero, x, s) == greedy_action(inst, x, s)


def test_single_site_score():
    inst = generate_random_instance(3, 1, 1, 3, cost_scale=2.0, discount=0.7)
    rel = solve_relaxation(inst)
    site = inst.sites[0]
    for x in range(3):
        expect = (site.active_reward[x] - inst.switch_cost[0, 0]
                  + 0.7 * site.active_transition[x] @ rel.lam[0, 0])
        assert osl_scores(inst, rel, (x,), (0,)).entries[0, 0] == pytest.approx(expect)
        assert osl_action(inst, rel, (x,), (0,)) == (0,) == pd_action(inst, rel, (x,), (0,))
        key = rel.layout.orig_idx[0, 0, 0, x]
        assert pd_index(inst, rel, (x,), (0,), (0,)) == pytest.approx(rel.reduced_costs[key])


def test_passive_rows_carry_no_cost(solved):
    inst, _ = solved
    x = (1, 0, 1)
    rows = [immediate_scores(inst, x, s)[2] for s in itertools.permutations(range(3))]
    for r in rows[1:]:
        np.testing.assert_array_equal(r, rows[0])


def test_zero_reduced_costs(solved):
    inst, rel = solved
    zero = replace(rel, reduced_costs=np.zeros_like(rel.reduced_costs))
    assert pd_action(inst, zero, (0, 1, 0), (2, 0, 1)) == (0, 1, 2)
    assert pd_index(inst, zero, (0, 1, 0), (2, 0, 1), (1, 2, 0)) == 0.0


def test_greedy_picks_richer_site():
    sites = [SiteModel([[1.0]], [[1.0]], [r], [0.0], [1.0]) for r in (1.0, 3.0)]
    inst = ProblemInstance(1, sites, np.zeros((2, 2)), 0.5, (0, 1))
    assert greedy_action(inst, (0, 0), (0, 1))[0] == 1


@given(small_instances(max_sites=4, max_states=2))
def test_lookahead_equals_primal_dual(inst):
    rel = solve_relaxation(inst)
    n = inst.n_sites
    ix = JointIndexer(inst.state_sizes)
    perms = [np.array(p) for p in ix.perms]
    for r in range(ix.n_states):
        x, s = ix.unrank(r)
        assert osl_action(inst, rel, x, s) == pd_action(inst, rel, x, s)
        m = osl_scores(inst, rel, x, s).entries
        g = pd_scores(inst, rel, x, s).entries
        tot = [g[np.arange(n), a].sum() + m[np.arange(n), a].sum() for a in perms]
        assert max(tot) - min(tot) <= 1e-6


def test_lure_state():
    inst = suite_by_name("P4").build(0.9)
    rel = solve_relaxation(inst)
    x = tuple(int(np.argmax(site.initial_dist)) for site in inst.sites)
    s = inst.initial_placement
    assert set(greedy_action(inst, x, s)[:2]) == {2, 3}
    assert set(osl_action(inst, rel, x, s)[:2]) == {0, 1}


def test_policy_spec_validation(solved):
    inst, rel = solved
    with pytest.raises(ValueError):
        PolicySpec("one_step_lookahead")
    with pytest.raises(ValueError):
        PolicySpec("random")
    with pytest.raises(ValueError):
        PolicySpec("whittle")
    with pytest.raises(ValueError):
        make_policy(generate_random_instance(13, 3, 2, 2), "primal_dual", rel)


def test_random_policy_reproducible(solved):
    inst, _ = solved
    a = make_policy(inst, "random", seed=4)
    b = make_policy(inst, "random", seed=4)
    seq_a = [a((0, 0, 0), (0, 1, 2)) for _ in range(10)]
    assert seq_a == [b((0, 0, 0), (0, 1, 2)) for _ in range(10)]
    assert all(sorted(p) == [0, 1, 2] for p in seq_a)
