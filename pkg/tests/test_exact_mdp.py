import itertools

import numpy as np
import pytest
from hypothesis import given

from rbpsc.exact_mdp import (GuardExceeded, JointIndexer, JointMDP, build_exact_primal,
                             enumerate_permutations, extract_policy, marginalize,
                             policy_as_function, policy_evaluation_exact, solve_exact,
                             value_iteration, value_iteration_bound)
from rbpsc.instance import generate_random_instance, immediate_reward
from rbpsc.relaxation import verify_marginal_feasibility

from conftest import single_site, small_instances, two_site


def test_permutations_lexicographic():
    assert enumerate_permutations(1) == [(0,)]
    p3 = enumerate_permutations(3)
    assert len(p3) == 6 and p3[0] == (0, 1, 2) and p3[-1] == (2, 1, 0)
    assert len(enumerate_permutations(4)) == 24


def test_indexer_round_trip():
    ix = JointIndexer((2, 3, 1))
    for r in range(ix.n_states):
        assert ix.rank(*ix.unrank(r)) == r


def test_primal_counts():
    inst = generate_random_instance(0, 2, 1, 2)
    model = build_exact_primal(inst)
    assert model.n_vars == 16 and model.n_rows == 8
    assert model.rhs.sum() == pytest.approx(1 - inst.discount)


def test_single_site_value():
    sol = solve_exact(single_site())
    assert sol.optimal_value == pytest.approx(2.0)
    assert value_iteration(single_site())[0] == pytest.approx([2.0])


def enumerate_policies(inst):
    """Oracle: evaluate every stationary deterministic policy in closed form."""
    mdp = JointMDP(inst)
    n_s, n_a = mdp.ix.n_states, mdp.ix.n_perm
    best = -np.inf
    for pol in itertools.product(range(n_a), repeat=n_s):
        best = max(best, mdp.nu @ mdp.evaluate(np.array(pol)))
    return best


def test_move_once_instance():
    inst = two_site(c12=1.0)
    sol = solve_exact(inst)
    assert sol.optimal_value == pytest.approx(5.0)
    assert enumerate_policies(inst) == pytest.approx(5.0)
    act = policy_as_function(sol.mdp, extract_policy(sol))
    assert act((0, 0), (0, 1)) == (1, 0)
    assert act((0, 0), (1, 0)) == (1, 0)


def test_never_move_when_expensive():
    inst = two_site(c12=10.0)
    assert solve_exact(inst).optimal_value == pytest.approx(2.0)
    assert enumerate_policies(inst) == pytest.approx(2.0)


def test_stay_policy_value():
    inst = two_site()
    mdp = JointMDP(inst)
    J = policy_evaluation_exact(inst, lambda x, s: s, mdp)
    assert mdp.nu @ J == pytest.approx(2.0)


def test_value_iteration_myopic_limit():
    inst = generate_random_instance(1, 2, 1, 2)
    mdp = JointMDP(inst)
    J, _ = value_iteration(inst, discount=0.0, mdp=mdp)
    np.testing.assert_allclose(J, mdp.reward().max(axis=2).reshape(-1), atol=1e-12)


def test_reward_table_matches_scalar_reward():
    inst = generate_random_instance(5, 3, 2, 2)
    mdp = JointMDP(inst)
    R = mdp.reward()
    ix = mdp.ix
    for r in range(0, ix.n_states, 7):
        x, s = ix.unrank(r)
        for ar, a in enumerate(ix.perms):
            assert R[ix.x_rank(x), ix.perm_rank[s], ar] == pytest.approx(immediate_reward(inst, x, s, a))


@given(small_instances())
def test_exact_agrees_with_value_iteration(inst):
    sol = solve_exact(inst)
    J, it = value_iteration(inst, tol=1e-8, mdp=sol.mdp)
    assert np.abs(J - sol.value_vector).max() <= 1e-6
    assert it <= value_iteration_bound(inst, 1e-8, sol.mdp)


@given(small_instances())
def test_extracted_policy_is_optimal(inst):
    sol = solve_exact(inst)
    pol = extract_policy(sol)
    J = policy_evaluation_exact(inst, pol, sol.mdp)
    assert sol.mdp.nu @ J == pytest.approx(sol.optimal_value, abs=1e-6)
    np.testing.assert_allclose(J, sol.value_vector, atol=1e-6)


@given(small_instances())
def test_no_policy_beats_optimum(inst):
    sol = solve_exact(inst)
    rng = np.random.default_rng(0)
    pol = rng.integers(sol.mdp.ix.n_perm, size=sol.mdp.ix.n_states)
    assert sol.mdp.nu @ policy_evaluation_exact(inst, pol, sol.mdp) <= sol.optimal_value + 1e-6


def test_unreachable_states_get_greedy_action():
    inst = two_site(c12=10.0)  # the server never leaves, so placement (2, 1) is never visited
    sol = solve_exact(inst)
    pol = extract_policy(sol)
    occ = sol.occupation.reshape(sol.mdp.ix.n_states, -1)
    empty = occ.max(axis=1) <= 1e-9
    assert empty.any()
    np.testing.assert_array_equal(pol[empty], sol.mdp.greedy(sol.value_vector)[empty])


@given(small_instances())
def test_marginals_satisfy_relaxation(inst):
    sol = solve_exact(inst)
    mg = marginalize(sol)
    res = verify_marginal_feasibility(inst, mg)
    assert max(res.values()) <= 1e-8
    # each agent's marginal is a probability measure over (origin state, s, a)
    for i in range(inst.n_sites):
        tot = sum(mg.origin(i, s, a).sum() for s in range(inst.n_sites) for a in range(inst.n_sites))
        assert tot == pytest.approx(1.0, abs=1e-7)


def test_single_site_marginal_is_occupation():
    inst = generate_random_instance(2, 1, 1, 3)
    sol = solve_exact(inst)
    mg = marginalize(sol)
    np.testing.assert_allclose(mg.origin(0, 0, 0), sol.occupation[:, 0, 0], atol=1e-14)


def test_guard():
    inst = generate_random_instance(0, 4, 2, 5)
    with pytest.raises(GuardExceeded):
        solve_exact(inst, max_nonzeros=10_000)
