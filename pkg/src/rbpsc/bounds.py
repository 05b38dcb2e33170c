"""Auditing the relaxation-based value approximation on small instances.

``J~(x; s) = sum_i lambda[i, s_i, x_{s_i}]`` should be feasible for the dual
of the exact LP, and the one-step lookahead policy it induces obeys

    nu^T (J* - J_u) <= F(nu, u)^T (J~ - J*) / (1 - alpha)

with ``F`` the normalised discounted state frequencies of ``u``.  All
quantities here are computed exactly by linear solves over the joint space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exact_mdp import JointMDP, solve_exact
from .instance import ProblemInstance
from .policies import osl_action
from .relaxation import RelaxationSolution


@dataclass(frozen=True)
class BoundReport:
    lhs: float  # nu^T (J* - J_u)
    rhs: float  # F^T (J~ - J*) / (1 - alpha)
    min_dual_slack: float
    optimal_value: float
    policy_value: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def approx_value(rel: RelaxationSolution, x, s, inst: ProblemInstance | None = None) -> float:
    if inst is not None and inst is not rel.inst:
        rel.check_instance(inst)
    lam = rel.lam
    return float(sum(lam[i, si, x[si]] for i, si in enumerate(s)))


def approx_value_vector(rel: RelaxationSolution, mdp: JointMDP) -> np.ndarray:
    ix = mdp.ix
    lam = rel.lam
    J = np.zeros((ix.n_x, ix.n_perm))
    agents = np.arange(ix.n)
    for sr, s in enumerate(ix.perm_array):
        J[:, sr] = lam[agents[None, :], s[None, :], ix.digits[:, s]].sum(axis=1)
    return J.reshape(-1)


def dual_feasibility_slacks(inst: ProblemInstance, J_tilde, mdp: JointMDP | None = None):
    """Slack of ``J(x;s) - alpha E[J(x';a)] >= R((x;s),a)`` for every (x, s, a).

    ``J_tilde`` is a vector over joint states or a callable ``(x, s) -> float``.
    Returns ``(slack[xr, sr, ar], min_slack)``.
    """
    mdp = mdp or JointMDP(inst)
    ix = mdp.ix
    if callable(J_tilde):
        J = np.array([J_tilde(*ix.unrank(r)) for r in range(ix.n_states)])
    else:
        J = np.asarray(J_tilde, dtype=float).reshape(-1)
    slack = J.reshape(ix.n_x, ix.n_perm)[:, :, None] - mdp.q_values(J)
    return slack, float(slack.min())


def occupation_measure(inst: ProblemInstance, policy, mdp: JointMDP | None = None) -> np.ndarray:
    """F = (1 - alpha) nu^T (I - alpha P_u)^-1, a probability vector over joint states."""
    mdp = mdp or JointMDP(inst)
    pol = mdp.tabulate(policy)
    A = (sp.identity(mdp.ix.n_states, format="csr") - mdp.alpha * mdp.policy_matrix(pol)).T
    return spla.spsolve(A.tocsc(), (1 - mdp.alpha) * mdp.nu)


def adp_gap_bound(inst: ProblemInstance, rel: RelaxationSolution, exact=None) -> BoundReport:
    if inst is not rel.inst:
        rel.check_instance(inst)
    exact = exact or solve_exact(inst)
    mdp = exact.mdp
    J_star = exact.value_vector
    J_tilde = approx_value_vector(rel, mdp)
    _, min_slack = dual_feasibility_slacks(inst, J_tilde, mdp)
    pol = mdp.tabulate(lambda x, s: osl_action(inst, rel, x, s))
    J_u = mdp.evaluate(pol)
    F = occupation_measure(inst, pol, mdp)
    lhs = float(mdp.nu @ (J_star - J_u))
    rhs = float(F @ (J_tilde - J_star) / (1 - inst.discount))
    return BoundReport(lhs, rhs, min_slack, float(mdp.nu @ J_star), float(mdp.nu @ J_u))
