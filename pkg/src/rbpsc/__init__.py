"""Restless bandits with switching costs: exact MDP, marginal LP relaxation, lookahead policies."""
from .instance import (InvalidInstance, ProblemInstance, SiteModel, generate_random_instance,
                       immediate_reward, load_instance, save_instance, validate_instance)
from .lp_core import LpBuilder, LpModel, LpSolution, solve_lp
from .exact_mdp import (GuardExceeded, extract_policy, marginalize, policy_evaluation_exact,
                        solve_exact, value_iteration)
from .relaxation import RelaxationSolution, build_relaxation, solve_relaxation
from .policies import hungarian, make_policy, osl_action, pd_action
from .simulate import SimConfig, evaluate_policy
from .bounds import BoundReport, adp_gap_bound

__all__ = [
    "InvalidInstance", "ProblemInstance", "SiteModel", "generate_random_instance",
    "immediate_reward", "load_instance", "save_instance", "validate_instance",
    "LpBuilder", "LpModel", "LpSolution", "solve_lp",
    "GuardExceeded", "extract_policy", "marginalize", "policy_evaluation_exact",
    "solve_exact", "value_iteration",
    "RelaxationSolution", "build_relaxation", "solve_relaxation",
    "hungarian", "make_policy", "osl_action", "pd_action",
    "SimConfig", "evaluate_policy", "BoundReport", "adp_gap_bound",
]
