"""Seeded Monte-Carlo evaluation of policies with a truncated horizon.

Each trajectory ``k`` owns the stream ``SeedSequence(master_seed).spawn``-style
child ``k``; it draws ``n_sites`` uniforms for the initial site states and
then ``n_sites`` uniforms per step.  Batched and single rollouts therefore see
identical randomness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import ProblemInstance, immediate_reward, sample_transition


@dataclass(frozen=True)
class SimConfig:
    n_trajectories: int = 10_000
    truncation_tol: float = 1e-6
    master_seed: int = 0
    R_max: float | None = None  # defaults to the instance's max |R|
    batch_size: int = 2_000

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if not self.truncation_tol > 0:
            raise ValueError("truncation_tol must be > 0")


@dataclass(frozen=True)
class EvaluationReport:
    mean: float
    std_error: float
    n_trajectories: int
    horizon: int
    confidence_interval_95: tuple

    def bias_bound(self, alpha: float, r_max: float) -> float:
        return alpha ** self.horizon * r_max / (1 - alpha)


def truncation_horizon(alpha: float, r_max: float, tol: float = 1e-6) -> int:
    """Smallest T with alpha**T * r_max < tol."""
    if not 0 < alpha < 1 or tol <= 0 or r_max < 0:
        raise ValueError("need 0 < alpha < 1, tol > 0, r_max >= 0")
    if r_max < tol:
        return 0
    t = max(0, math.floor(math.log(tol / r_max) / math.log(alpha)))
    while alpha ** t * r_max >= tol:
        t += 1
    while t > 0 and alpha ** (t - 1) * r_max < tol:
        t -= 1
    return t


def trajectory_rng(master_seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(k,)))


def _initial_states(inst: ProblemInstance, u) -> tuple:
    out = []
    for j, site in enumerate(inst.sites):
        cdf = np.cumsum(site.initial_dist)
        out.append(min(int(np.searchsorted(cdf, u[j], side="right")), site.state_count - 1))
    return tuple(out)


def rollout(inst: ProblemInstance, policy, horizon: int, rng: np.random.Generator,
            trace: list | None = None) -> float:
    """Discounted reward of one trajectory over ``horizon`` steps."""
    x = _initial_states(inst, rng.random(inst.n_sites))
    s = tuple(inst.initial_placement)
    total, disc = 0.0, 1.0
    for t in range(horizon):
        a = tuple(policy(x, s))
        r = immediate_reward(inst, x, s, a)
        if trace is not None:
            trace.append((t, x, s, a, r))
        total += disc * r
        disc *= inst.discount
        x, s = sample_transition(inst, x, a, rng), a
    return total


class _Tables:
    def __init__(self, inst: ProblemInstance):
        n, kmax = inst.n_sites, max(inst.state_sizes)
        self.cdf = np.full((n, 2, kmax, kmax), 2.0)
        self.rew = np.zeros((n, 2, kmax))
        self.size = np.array(inst.state_sizes)
        for j, site in enumerate(inst.sites):
            k = site.state_count
            for act in (0, 1):
                self.cdf[j, act, :k, :k] = np.cumsum(site.transition(bool(act)), axis=1)
                self.rew[j, act, :k] = site.reward(bool(act))
        self.init_cdf = np.full((n, kmax), 2.0)
        for j, site in enumerate(inst.sites):
            self.init_cdf[j, : site.state_count] = np.cumsum(site.initial_dist)


def _sample(cdf_rows, u, size):
    # index of the first cdf entry > u, as searchsorted(side="right")
    idx = (u[..., None] >= cdf_rows).sum(axis=-1)
    return np.minimum(idx, size - 1)


def _batch_rollouts(inst, policy, horizon, rngs, tab, log=None, first_id=0):
    b, n, m = len(rngs), inst.n_sites, inst.n_servers
    sites = np.arange(n)
    uni = np.stack([g.random((horizon + 1) * n) for g in rngs]).reshape(b, horizon + 1, n)
    x = _sample(tab.init_cdf[sites[None, :]], uni[:, 0], tab.size[None, :])
    s = np.tile(np.array(inst.initial_placement), (b, 1))
    total = np.zeros(b)
    disc = 1.0
    c = inst.switch_cost
    for t in range(horizon):
        a = np.array([policy(tuple(xr), tuple(sr)) for xr, sr in zip(x.tolist(), s.tolist())])
        act = np.zeros((b, n), dtype=int)
        np.put_along_axis(act, a[:, :m], 1, axis=1)
        r = tab.rew[sites[None, :], act, x].sum(axis=1)
        r -= c[s[:, :m], a[:, :m]].sum(axis=1)
        if log is not None:
            for k in range(b):
                log.append((first_id + k, t, tuple(x[k]), tuple(s[k]), tuple(a[k]), float(r[k])))
        total += disc * r
        disc *= inst.discount
        x = _sample(tab.cdf[sites[None, :], act, x], uni[:, t + 1], tab.size[None, :])
        s = a
    return total


def _pairwise_mean_var(v):
    # numpy reductions use pairwise summation
    mean = float(np.mean(v))
    var = float(np.var(v, ddof=1)) if len(v) > 1 else 0.0
    return mean, var


def evaluate_policy(inst: ProblemInstance, policy, cfg: SimConfig = SimConfig(),
                    log: list | None = None) -> EvaluationReport:
    r_max = inst.max_abs_reward() if cfg.R_max is None else cfg.R_max
    horizon = truncation_horizon(inst.discount, r_max, cfg.truncation_tol)
    tab = _Tables(inst)
    values = np.empty(cfg.n_trajectories)
    for lo in range(0, cfg.n_trajectories, cfg.batch_size):
        hi = min(lo + cfg.batch_size, cfg.n_trajectories)
        rngs = [trajectory_rng(cfg.master_seed, k) for k in range(lo, hi)]
        values[lo:hi] = _batch_rollouts(inst, policy, horizon, rngs, tab, log, lo)
    mean, var = _pairwise_mean_var(values)
    se = math.sqrt(var / len(values))
    return EvaluationReport(mean, se, cfg.n_trajectories, horizon,
                            (mean - 1.959963984540054 * se, mean + 1.959963984540054 * se))


def write_trajectory_log(rows, path):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "t", "state", "placement", "action", "reward"])
        for k, t, x, s, a, r in rows:
            w.writerow([k, t, " ".join(map(str, x)), " ".join(str(v + 1) for v in s),
                        " ".join(str(v + 1) for v in a), repr(r)])
