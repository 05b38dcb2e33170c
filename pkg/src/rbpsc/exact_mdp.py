"""Exact treatment of small instances over the joint state space.

Joint states are ``(x; s)`` with ``x`` a tuple of site states and ``s`` a
placement permutation; an action is the next placement ``a``.  Everything is
indexed densely: ``x`` by mixed radix (site 0 most significant, matching
``np.kron``), permutations by lexicographic rank, and the joint state
``(x; s)`` by ``x_rank * N! + s_rank``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from itertools import permutations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .instance import ProblemInstance
from .lp_core import LpModel, solve_or_raise

MAX_SITES = 8
MAX_NONZEROS = 2_000_000


class GuardExceeded(ValueError):
    pass


def enumerate_permutations(n: int, max_sites: int = MAX_SITES) -> list:
    if n > max_sites:
        raise GuardExceeded(f"{n}! permutations exceeds the guard of {max_sites} sites")
    return list(permutations(range(n)))


class JointIndexer:
    """Rank/unrank for site-state vectors, placements and joint states."""

    def __init__(self, sizes, max_sites: int = MAX_SITES):
        self.sizes = tuple(int(k) for k in sizes)
        self.n = len(self.sizes)
        self.perms = enumerate_permutations(self.n, max_sites)
        self.perm_rank = {p: r for r, p in enumerate(self.perms)}
        self.n_x = int(np.prod(self.sizes))
        self.n_perm = len(self.perms)
        self.n_states = self.n_x * self.n_perm
        # digits[xr, j] = state of site j
        self.digits = np.array(np.unravel_index(np.arange(self.n_x), self.sizes)).T.reshape(
            self.n_x, self.n)
        self.perm_array = np.array(self.perms, dtype=int).reshape(self.n_perm, self.n)

    def x_rank(self, x) -> int:
        return int(np.ravel_multi_index(tuple(x), self.sizes))

    def x_unrank(self, r: int) -> tuple:
        return tuple(int(v) for v in self.digits[r])

    def rank(self, x, s) -> int:
        return self.x_rank(x) * self.n_perm + self.perm_rank[tuple(s)]

    def unrank(self, r: int):
        xr, sr = divmod(int(r), self.n_perm)
        return self.x_unrank(xr), self.perms[sr]


class JointMDP:
    """Dense/sparse model of the joint chain: per-action transition, rewards, initial law."""

    def __init__(self, inst: ProblemInstance, max_sites: int = MAX_SITES,
                 max_nonzeros: int = MAX_NONZEROS):
        inst.check()
        self.inst = inst
        self.alpha = inst.discount
        self.ix = ix = JointIndexer(inst.state_sizes, max_sites)
        n, m = inst.n_sites, inst.n_servers

        nnz_site = [[np.count_nonzero(s.transition(act), axis=1) for act in (False, True)]
                    for s in inst.sites]
        nnz = 0
        for a in ix.perms:
            act = set(a[:m])
            per_x = reduce(np.multiply.outer, [nnz_site[j][j in act] for j in range(n)])
            nnz += int(per_x.sum()) * ix.n_perm
        nnz += ix.n_states * ix.n_perm
        self.nonzeros = nnz
        if nnz > max_nonzeros:
            raise GuardExceeded(f"exact LP would have {nnz} nonzeros (guard {max_nonzeros})")

        self._trans_cache = {}
        self.P = []
        self.site_reward = np.zeros((ix.n_perm, ix.n_x))
        for ar, a in enumerate(ix.perms):
            act = frozenset(a[:m])
            if act not in self._trans_cache:
                mats = [inst.sites[j].transition(j in act) for j in range(n)]
                self._trans_cache[act] = sp.csr_matrix(reduce(np.kron, mats))
            self.P.append(self._trans_cache[act])
            for j in range(n):
                self.site_reward[ar] += inst.sites[j].reward(j in act)[ix.digits[:, j]]
        perm = ix.perm_array
        c = inst.switch_cost
        # cost[sr, ar] = sum over servers of c[s_i, a_i]
        self.cost = c[perm[:, None, :m], perm[None, :, :m]].sum(axis=2)
        nu_x = reduce(np.multiply.outer, [s.initial_dist for s in inst.sites]).reshape(-1)
        self.nu = np.zeros((ix.n_x, ix.n_perm))
        self.nu[:, ix.perm_rank[tuple(inst.initial_placement)]] = nu_x
        self.nu = self.nu.reshape(-1)

    def reward(self) -> np.ndarray:
        """R[xr, sr, ar]."""
        return self.site_reward.T[:, None, :] - self.cost[None, :, :]

    def q_values(self, J) -> np.ndarray:
        """Q[xr, sr, ar] = R + alpha * E[J(x', a)] for a value table J[xr, sr]."""
        J = np.asarray(J).reshape(self.ix.n_x, self.ix.n_perm)
        ev = np.column_stack([self.P[ar] @ J[:, ar] for ar in range(self.ix.n_perm)])
        return (self.site_reward.T + self.alpha * ev)[:, None, :] - self.cost[None, :, :]

    def greedy(self, J, tol: float = 1e-9) -> np.ndarray:
        """Greedy action ranks per joint state; near-ties go to the smallest rank."""
        q = self.q_values(J)
        best = q.max(axis=2, keepdims=True)
        scale = tol * (1.0 + np.abs(best))
        return np.argmax(q >= best - scale, axis=2).reshape(-1)

    def policy_matrix(self, pol) -> sp.csr_matrix:
        """Transition matrix of the joint chain under action ranks ``pol[state]``."""
        ix = self.ix
        pol = np.asarray(pol, dtype=int).reshape(-1)
        rows, cols, vals = [], [], []
        states = np.arange(ix.n_states)
        for ar in np.unique(pol):
            sel = states[pol == ar]
            sub = self.P[ar][sel // ix.n_perm].tocoo()
            rows.append(sel[sub.row])
            cols.append(sub.col * ix.n_perm + ar)
            vals.append(sub.data)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(ix.n_states, ix.n_states))

    def policy_reward(self, pol) -> np.ndarray:
        ix = self.ix
        pol = np.asarray(pol, dtype=int).reshape(-1)
        states = np.arange(ix.n_states)
        xr, sr = np.divmod(states, ix.n_perm)
        return self.site_reward[pol, xr] - self.cost[sr, pol]

    def tabulate(self, policy) -> np.ndarray:
        """Accept action ranks, or a callable ``policy(x, s) -> a`` over tuples."""
        if callable(policy):
            ix = self.ix
            out = np.empty(ix.n_states, dtype=int)
            for r in range(ix.n_states):
                x, s = ix.unrank(r)
                out[r] = ix.perm_rank[tuple(int(v) for v in policy(x, s))]
            return out
        pol = np.asarray(policy, dtype=int).reshape(-1)
        if pol.shape != (self.ix.n_states,):
            raise ValueError("policy table has the wrong length")
        return pol

    def evaluate(self, pol) -> np.ndarray:
        A = sp.identity(self.ix.n_states, format="csr") - self.alpha * self.policy_matrix(pol)
        R = self.policy_reward(pol)
        J = spla.spsolve(A.tocsc(), R)
        resid = np.abs(A @ J - R).max()
        if resid > 1e-9 * max(1.0, np.abs(R).max()):
            # one refinement step
            J = J + spla.spsolve(A.tocsc(), R - A @ J)
        return J


def build_exact_primal(inst: ProblemInstance, mdp: JointMDP | None = None,
                       max_nonzeros: int = MAX_NONZEROS) -> LpModel:
    """State-action frequency LP: one variable per ((x;s),a), one balance row per (x;s)."""
    mdp = mdp or JointMDP(inst, max_nonzeros=max_nonzeros)
    ix, alpha = mdp.ix, mdp.alpha
    n_p = ix.n_perm
    n_vars = ix.n_states * n_p
    rows, cols, vals = [np.repeat(np.arange(ix.n_states), n_p)], [np.arange(n_vars)], [np.ones(n_vars)]
    sr = np.arange(n_p)
    for ar in range(n_p):
        coo = mdp.P[ar].tocoo()
        # variable ((x;s),a) feeds (x';a) with probability P_a[x, x']
        var = ((coo.row[None, :] * n_p + sr[:, None]) * n_p + ar).reshape(-1)
        rows.append(np.tile(coo.col * n_p + ar, n_p))
        cols.append(var)
        vals.append(np.tile(-alpha * coo.data, n_p))
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(ix.n_states, n_vars))
    obj = mdp.reward().reshape(-1)
    return LpModel(range(n_vars), np.zeros(n_vars), np.full(n_vars, np.inf), obj, mat,
                   ["="] * ix.n_states, (1 - alpha) * mdp.nu, range(ix.n_states), maximize=True)


@dataclass(frozen=True, eq=False)
class ExactSolution:
    inst: ProblemInstance
    mdp: JointMDP
    occupation: np.ndarray  # [xr, sr, ar]
    dual_vector: np.ndarray  # LP duals of the balance rows, per joint state
    value_vector: np.ndarray  # J*, per joint state
    optimal_value: float
    lp_objective: float

    def value(self, x, s) -> float:
        return float(self.value_vector[self.mdp.ix.rank(x, s)])


def _polish(mdp: JointMDP, J0, max_iter: int = 200) -> np.ndarray:
    # policy iteration seeded by the LP duals; off-support duals only bound J* from above
    pol = mdp.greedy(J0)
    J = mdp.evaluate(pol)
    for _ in range(max_iter):
        q = mdp.q_values(J).reshape(mdp.ix.n_states, -1)
        cur = q[np.arange(len(pol)), pol]
        best = q.max(axis=1)
        improve = best > cur + 1e-11 * (1.0 + np.abs(cur))
        if not improve.any():
            return J
        pol = np.where(improve, q.argmax(axis=1), pol)
        J = mdp.evaluate(pol)
    raise RuntimeError("policy iteration did not converge")


def solve_exact(inst: ProblemInstance, max_nonzeros: int = MAX_NONZEROS) -> ExactSolution:
    mdp = JointMDP(inst, max_nonzeros=max_nonzeros)
    model = build_exact_primal(inst, mdp)
    sol = solve_or_raise(model)
    n_p = mdp.ix.n_perm
    occ = np.maximum(sol.primal, 0.0).reshape(mdp.ix.n_x, n_p, n_p)
    J = _polish(mdp, sol.dual)
    return ExactSolution(inst, mdp, occ, sol.dual.copy(), J,
                         sol.objective / (1 - inst.discount), sol.objective)


def value_iteration(inst: ProblemInstance, tol: float = 1e-8, *, discount: float | None = None,
                    mdp: JointMDP | None = None):
    """Value iteration to a Bellman residual below ``tol * (1 - alpha)``.

    Returns ``(J, iterations)``.  ``discount`` overrides the instance's
    (``0`` is accepted here, giving the myopic values).
    """
    mdp = mdp or JointMDP(inst)
    alpha = inst.discount if discount is None else float(discount)
    saved, mdp.alpha = mdp.alpha, alpha
    try:
        R = mdp.reward()
        r_lo = R.min()
        # constant start makes the first residual at most the reward span
        J = np.full(mdp.ix.n_states, r_lo / (1 - alpha))
        target = tol * (1 - alpha)
        it = 0
        while True:
            J_new = mdp.q_values(J).max(axis=2).reshape(-1)
            it += 1
            resid = np.abs(J_new - J).max()
            J = J_new
            if resid <= target:
                return J, it
    finally:
        mdp.alpha = saved


def value_iteration_bound(inst: ProblemInstance, tol: float, mdp: JointMDP | None = None) -> int:
    mdp = mdp or JointMDP(inst)
    R = mdp.reward()
    span = R.max() - R.min()
    alpha = inst.discount
    if span <= tol * (1 - alpha):
        return 1
    return math.ceil(math.log(tol * (1 - alpha) / span) / math.log(alpha)) + 1


def policy_evaluation_exact(inst: ProblemInstance, policy, mdp: JointMDP | None = None) -> np.ndarray:
    mdp = mdp or JointMDP(inst)
    return mdp.evaluate(mdp.tabulate(policy))


def extract_policy(sol: ExactSolution, mass_tol: float = 1e-9) -> np.ndarray:
    """Action ranks per joint state recovered from the occupation measure."""
    mdp = sol.mdp
    occ = sol.occupation.reshape(mdp.ix.n_states, -1)
    greedy = mdp.greedy(sol.value_vector)
    positive = occ > mass_tol
    has_mass = positive.any(axis=1)
    return np.where(has_mass, np.argmax(positive, axis=1), greedy)


def policy_as_function(mdp: JointMDP, pol):
    ix = mdp.ix

    def act(x, s):
        return ix.perms[pol[ix.rank(x, s)]]

    return act


def marginalize(sol: ExactSolution):
    """Project the occupation measure onto the relaxation's per-agent marginals."""
    from .relaxation import Marginals, RelaxationLayout

    inst, mdp = sol.inst, sol.mdp
    ix = mdp.ix
    layout = RelaxationLayout.for_instance(inst)
    n = inst.n_sites
    vec = np.zeros(layout.n_vars)
    occ = sol.occupation
    xr = np.arange(ix.n_x)[:, None, None]
    for i in range(n):
        s = ix.perm_array[:, i][None, :, None]
        a = ix.perm_array[:, i][None, None, :]
        s_b = np.broadcast_to(s, occ.shape)
        a_b = np.broadcast_to(a, occ.shape)
        x_s = ix.digits[np.broadcast_to(xr, occ.shape), s_b]
        x_a = ix.digits[np.broadcast_to(xr, occ.shape), a_b]
        off = s_b != a_b
        o_idx = layout.orig_idx[i, s_b, a_b, x_s]
        d_idx = layout.dest_idx[i, s_b, a_b, x_a]
        np.add.at(vec, o_idx.reshape(-1), occ.reshape(-1))
        # canonical s == a variables are shared: count them once
        np.add.at(vec, d_idx[off], occ[off])
    return Marginals(layout, vec)
