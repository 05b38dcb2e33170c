"""Instance families used by the benchmark harness.

The published experiment instances are not available, so each suite is a
seeded generator with the same (N, M, |S|, c/r) shape and a qualitative design
(plain bandit, deteriorating bandit, lure, restless).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .instance import ProblemInstance, SiteModel, generate_random_instance, switch_ratio


def rescale_costs(inst: ProblemInstance, target_ratio: float) -> ProblemInstance:
    """Zero the diagonal and scale switching costs so that mean(c) / mean(r1) = target."""
    c = np.array(inst.switch_cost, dtype=float)
    np.fill_diagonal(c, 0.0)
    if target_ratio == 0 or not c.any():
        c = np.zeros_like(c)
    else:
        mean_r = np.mean(np.concatenate([s.active_reward for s in inst.sites]))
        c *= target_ratio * mean_r / c.mean()
    return ProblemInstance(inst.n_servers, inst.sites, c, inst.discount,
                           inst.initial_placement, inst.name)


def deteriorating_bandit(seed: int, n_sites: int = 4, n_servers: int = 1, n_states: int = 3,
                         c_over_r: float = 0.0, reward_scale: float = 100.0,
                         discount: float = 0.9) -> ProblemInstance:
    """Frozen passive sites; active rewards decrease along an upward-drifting chain."""
    rng = np.random.default_rng(seed)
    sites = []
    for _ in range(n_sites):
        r1 = np.sort(rng.uniform(0.0, reward_scale, n_states))[::-1].copy()
        p1 = np.triu(rng.random((n_states, n_states)) + 1e-3)
        p1 /= p1.sum(axis=1, keepdims=True)
        nu = np.zeros(n_states)
        nu[0] = 1.0
        sites.append(SiteModel(p1, np.eye(n_states), r1, np.zeros(n_states), nu))
    cost = rng.uniform(0.0, 1.0, (n_sites, n_sites))
    inst = ProblemInstance(n_servers, sites, cost, discount, tuple(range(n_sites)),
                           name=f"deteriorating-{seed}")
    return rescale_costs(inst, c_over_r)


def lure_instance(seed: int = 0, discount: float = 0.9, n_states: int = 5,
                  home_reward: float = 10.0, lure_reward: float | None = None,
                  far_cost: float = 25.0, near_cost: float = 1.0,
                  recovery: float = 0.05, home_noise: float = 0.5) -> ProblemInstance:
    """Two servers at two home sites; two remote sites look better after paying the trip.

    Remote sites pay ``lure_reward`` only in their fresh state and fall to a
    worthless state once served, recovering slowly while left alone.  A myopic
    controller goes there, then never pays the trip back.  By default the lure
    beats staying home by 1 after travel costs.
    """
    if lure_reward is None:
        lure_reward = home_reward + far_cost + 1.0
    rng = np.random.default_rng(seed)
    k = n_states
    sites = []
    for _ in range(2):
        r1 = home_reward + rng.normal(0.0, home_noise, k)
        p = rng.random((k, k)) + 0.1
        p /= p.sum(axis=1, keepdims=True)
        nu = np.zeros(k)
        nu[rng.integers(k)] = 1.0
        sites.append(SiteModel(p, p, r1, np.zeros(k), nu))
    for _ in range(2):
        r1 = np.zeros(k)
        r1[0] = lure_reward
        drop = np.zeros((k, k))
        drop[:, k - 1] = 1.0  # one visit spoils the site
        recover = (1 - recovery) * np.eye(k)
        recover[:, 0] += recovery
        nu = np.zeros(k)
        nu[0] = 1.0
        sites.append(SiteModel(drop, recover, r1, np.zeros(k), nu))
    home = np.array([True, True, False, False])
    # remote sites are far from everything, including each other
    cost = np.where(home[:, None] & home[None, :], near_cost, far_cost)
    np.fill_diagonal(cost, 0.0)
    return ProblemInstance(2, sites, cost, discount, (0, 1, 2, 3), name=f"lure-{seed}")


def lure_for_ratio(seed: int, c_over_r: float, discount: float = 0.9, n_states: int = 5,
                   **kw) -> ProblemInstance:
    """Lure instance whose far travel cost is tuned to hit the requested c/r."""
    def gap(far):
        return switch_ratio(lure_instance(seed, discount, n_states, far_cost=far, **kw)) - c_over_r
    far = brentq(gap, 1e-3, 1e4, xtol=1e-10)
    return lure_instance(seed, discount, n_states, far_cost=far, **kw)


def restless_instance(seed: int, n_sites: int, n_servers: int, n_states: int,
                      c_over_r: float, reward_scale: float = 100.0,
                      discount: float = 0.9) -> ProblemInstance:
    inst = generate_random_instance(seed, n_sites, n_servers, n_states, cost_scale=1.0,
                                    reward_scale=reward_scale, discount=discount)
    return rescale_costs(inst, c_over_r)


def bandit_instance(seed: int, n_sites: int, n_servers: int, n_states: int,
                    reward_scale: float = 100.0, discount: float = 0.9) -> ProblemInstance:
    return generate_random_instance(seed, n_sites, n_servers, n_states, cost_scale=0.0,
                                    reward_scale=reward_scale, discount=discount,
                                    passive="identity")


@dataclass(frozen=True)
class SuiteSpec:
    problem: str
    kind: str  # bandit | deteriorating | lure | restless
    n_sites: int
    n_servers: int
    n_states: int
    c_over_r: float
    alphas: tuple
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def build(self, alpha: float) -> ProblemInstance:
        if self.kind == "bandit":
            inst = bandit_instance(self.seed, self.n_sites, self.n_servers, self.n_states)
        elif self.kind == "deteriorating":
            inst = deteriorating_bandit(self.seed, self.n_sites, self.n_servers, self.n_states,
                                        self.c_over_r)
        elif self.kind == "lure":
            inst = lure_for_ratio(self.seed, self.c_over_r, n_states=self.n_states, **self.extra)
        elif self.kind == "restless":
            inst = restless_instance(self.seed, self.n_sites, self.n_servers, self.n_states,
                                     self.c_over_r)
        else:
            raise ValueError(f"unknown suite kind {self.kind!r}")
        return ProblemInstance(inst.n_servers, inst.sites, inst.switch_cost, alpha,
                               inst.initial_placement, name=self.problem)


BENCHMARK_SUITES = (
    SuiteSpec("P1", "bandit", 4, 1, 3, 0.0, (0.5, 0.9, 0.99), seed=1),
    SuiteSpec("P2", "deteriorating", 4, 1, 3, 0.0, (0.5, 0.9, 0.99), seed=2),
    SuiteSpec("P3", "deteriorating", 4, 1, 3, 0.6, (0.5, 0.9, 0.99), seed=2),
    SuiteSpec("P4", "lure", 4, 2, 5, 1.39, (0.5, 0.9, 0.95), seed=4),
    SuiteSpec("P5", "restless", 6, 2, 4, 0.0, (0.5, 0.9, 0.95), seed=5),
    SuiteSpec("P6", "restless", 6, 2, 4, 1.51, (0.5, 0.9, 0.95), seed=6),
    SuiteSpec("P7", "restless", 20, 15, 3, 1.16, (0.5, 0.9, 0.95), seed=7),
    SuiteSpec("P8", "restless", 30, 15, 2, 2.18, (0.5, 0.9, 0.95), seed=8),
)


def suite_by_name(name: str) -> SuiteSpec:
    for spec in BENCHMARK_SUITES:
        if spec.problem == name:
            return spec
    raise KeyError(f"no suite {name!r}; known: {[s.problem for s in BENCHMARK_SUITES]}")


def realised_ratio(inst: ProblemInstance) -> float:
    try:
        return switch_ratio(inst)
    except ValueError:
        return float("nan")
