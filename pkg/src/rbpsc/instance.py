"""Problem instances for the restless bandit problem with switching costs.

Sites are 0-based internally; the instance file and CLI speak 1-based
placements.  Agent ``i`` is active (a real server) iff ``i < n_servers``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = "rbpsc-v1"
STOCH_TOL = 1e-9


class InvalidInstance(ValueError):
    pass


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SiteModel:
    active_transition: np.ndarray
    passive_transition: np.ndarray
    active_reward: np.ndarray
    passive_reward: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        for name in ("active_transition", "passive_transition", "active_reward",
                     "passive_reward", "initial_dist"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def state_count(self) -> int:
        return len(self.active_reward)

    def transition(self, active: bool) -> np.ndarray:
        return self.active_transition if active else self.passive_transition

    def reward(self, active: bool) -> np.ndarray:
        return self.active_reward if active else self.passive_reward


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    n_servers: int
    sites: tuple
    switch_cost: np.ndarray
    discount: float
    initial_placement: tuple
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "switch_cost", _frozen(self.switch_cost))
        object.__setattr__(self, "initial_placement",
                           tuple(int(v) for v in self.initial_placement))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "n_servers", int(self.n_servers))

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def state_sizes(self) -> tuple:
        return tuple(site.state_count for site in self.sites)

    def is_active(self, agent: int) -> bool:
        return agent < self.n_servers

    def with_discount(self, discount: float) -> "ProblemInstance":
        return ProblemInstance(self.n_servers, self.sites, self.switch_cost, discount,
                               self.initial_placement, self.name)

    def check(self):
        report = validate_instance(self)
        if not report.ok:
            raise InvalidInstance("; ".join(report.violations))

    def max_abs_reward(self) -> float:
        """Largest |R((x;s),a)| over all states and actions (used for truncation)."""
        return max_abs_immediate_reward(self)

    def digest(self) -> str:
        """sha256 of the serialized instance (memoized; instances are immutable)."""
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = hashlib.sha256(dumps_instance(self).encode("utf-8")).hexdigest()
            self.__dict__["_digest"] = cached
        return cached


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _is_permutation(p, n) -> bool:
    return len(p) == n and sorted(p) == list(range(n))


def validate_instance(inst: ProblemInstance) -> ValidationReport:
    rep = ValidationReport()
    add = rep.violations.append
    n = inst.n_sites
    if n < 1:
        add("n_sites: must be at least 1")
    if not 1 <= inst.n_servers <= max(n, 1):
        add(f"n_servers: {inst.n_servers} not in [1, {n}]")
    if not 0.0 < inst.discount < 1.0:
        add(f"discount: {inst.discount} not in (0, 1)")
    if not _is_permutation(list(inst.initial_placement), n):
        add(f"initial_placement: {inst.initial_placement} not a permutation of {n} sites")
    c = inst.switch_cost
    if c.shape != (n, n):
        add(f"switch_cost: shape {c.shape} != ({n}, {n})")
    elif not np.all(np.isfinite(c)):
        add("switch_cost: non-finite entries")
    for j, site in enumerate(inst.sites):
        k = site.state_count
        where = f"sites[{j}]"
        if k < 1:
            add(f"{where}: empty state space")
            continue
        for name in ("active_reward", "passive_reward", "initial_dist"):
            v = getattr(site, name)
            if v.shape != (k,):
                add(f"{where}.{name}: shape {v.shape} != ({k},)")
            elif not np.all(np.isfinite(v)):
                add(f"{where}.{name}: non-finite entries")
        for name in ("active_transition", "passive_transition"):
            p = getattr(site, name)
            if p.shape != (k, k):
                add(f"{where}.{name}: shape {p.shape} != ({k}, {k})")
                continue
            if np.any(p < 0) or not np.all(np.isfinite(p)):
                add(f"{where}.{name}: negative or non-finite entries")
            resid = np.abs(p.sum(axis=1) - 1.0)
            if resid.max() > STOCH_TOL:
                row = int(resid.argmax())
                add(f"{where}.{name}: row {row} row-stochastic residual {resid[row]:.6g}")
        nu = site.initial_dist
        if nu.shape == (k,):
            if np.any(nu < 0):
                add(f"{where}.initial_dist: negative entries")
            if abs(nu.sum() - 1.0) > STOCH_TOL:
                add(f"{where}.initial_dist: probability residual {abs(nu.sum() - 1.0):.6g}")
    return rep


def _check_perm(p, n, what):
    if not _is_permutation(list(p), n):
        raise ValueError(f"{what} {tuple(p)} is not a permutation of range({n})")


def immediate_reward(inst: ProblemInstance, x, s, a) -> float:
    """R((x;s),a): active rewards minus travel costs for the servers, plus passive rewards."""
    n, m = inst.n_sites, inst.n_servers
    if len(x) != n:
        raise ValueError(f"state has {len(x)} components, expected {n}")
    _check_perm(s, n, "placement")
    _check_perm(a, n, "action")
    total = 0.0
    for i in range(n):
        site = inst.sites[a[i]]
        if i < m:
            total += site.active_reward[x[a[i]]] - inst.switch_cost[s[i], a[i]]
        else:
            total += site.passive_reward[x[a[i]]]
    return float(total)


def active_sites(inst: ProblemInstance, a) -> np.ndarray:
    mask = np.zeros(inst.n_sites, dtype=bool)
    mask[list(a[: inst.n_servers])] = True
    return mask


def joint_transition_prob(inst: ProblemInstance, x, a, x_next) -> float:
    n = inst.n_sites
    if len(x) != n or len(x_next) != n:
        raise ValueError("state dimension mismatch")
    _check_perm(a, n, "action")
    act = active_sites(inst, a)
    prob = 1.0
    for j, site in enumerate(inst.sites):
        prob *= site.transition(act[j])[x[j], x_next[j]]
    return float(prob)


def sample_transition(inst: ProblemInstance, x, a, rng: np.random.Generator) -> tuple:
    """Draw the next site states; consumes exactly ``n_sites`` uniforms from ``rng``."""
    act = active_sites(inst, a)
    u = rng.random(inst.n_sites)
    out = []
    for j, site in enumerate(inst.sites):
        cdf = np.cumsum(site.transition(act[j])[x[j]])
        out.append(min(int(np.searchsorted(cdf, u[j], side="right")), site.state_count - 1))
    return tuple(out)


def switch_ratio(inst: ProblemInstance) -> float:
    mean_r = np.mean(np.concatenate([s.active_reward for s in inst.sites]))
    if mean_r == 0:
        raise ValueError("mean active reward is zero")
    return float(np.mean(inst.switch_cost) / mean_r)


def max_abs_immediate_reward(inst: ProblemInstance) -> float:
    """max |R((x;s),a)|; exact for up to 6 sites, a valid upper bound beyond."""
    from itertools import permutations

    from scipy.optimize import linear_sum_assignment

    n, m = inst.n_sites, inst.n_servers
    c = inst.switch_cost
    if n > 6:
        rmax = sum(max(np.abs(s.active_reward).max(), np.abs(s.passive_reward).max())
                   for s in inst.sites)
        return float(rmax + m * np.abs(c).max())
    r1 = [(s.active_reward.min(), s.active_reward.max()) for s in inst.sites]
    r0 = [(s.passive_reward.min(), s.passive_reward.max()) for s in inst.sites]
    best = 0.0
    for a in permutations(range(n)):
        act = set(a[:m])
        lo = sum(r1[j][0] if j in act else r0[j][0] for j in range(n))
        up = sum(r1[j][1] if j in act else r0[j][1] for j in range(n))
        # servers' origins range over injective maps into the sites
        sub = c[:, list(a[:m])].T
        rows, cols = linear_sum_assignment(sub)
        cmin = sub[rows, cols].sum()
        rows, cols = linear_sum_assignment(sub, maximize=True)
        cmax = sub[rows, cols].sum()
        best = max(best, abs(up - cmin), abs(lo - cmax), abs(up - cmax), abs(lo - cmin))
    return float(best)


def _rand_stochastic(rng, k, rows):
    w = rng.random((rows, k)) + 1e-3
    return w / w.sum(axis=1, keepdims=True)


def generate_random_instance(seed: int, n_sites: int, n_servers: int, states_per_site,
                             cost_scale: float = 1.0, reward_scale: float = 1.0, *,
                             discount: float = 0.9, passive: str = "random",
                             deterministic_init: bool = True) -> ProblemInstance:
    """Random instance with uniform rewards in [0, reward_scale] and costs in [0, cost_scale].

    ``passive="identity"`` freezes unserved sites (classical multi-armed bandit).
    ``states_per_site`` is an int or one size per site.
    """
    if n_sites < 1 or not 1 <= n_servers <= n_sites:
        raise ValueError(f"need 1 <= n_servers <= n_sites, got M={n_servers}, N={n_sites}")
    if cost_scale < 0 or reward_scale < 0:
        raise ValueError("scales must be nonnegative")
    if passive not in ("random", "identity"):
        raise ValueError(f"unknown passive mode {passive!r}")
    sizes = ([int(states_per_site)] * n_sites if np.isscalar(states_per_site)
             else [int(k) for k in states_per_site])
    if len(sizes) != n_sites or min(sizes) < 1:
        raise ValueError("bad states_per_site")
    rng = np.random.default_rng(seed)
    sites = []
    for k in sizes:
        p1 = _rand_stochastic(rng, k, k)
        p0 = np.eye(k) if passive == "identity" else _rand_stochastic(rng, k, k)
        r1 = rng.uniform(0.0, reward_scale, k)
        r0 = np.zeros(k) if passive == "identity" else rng.uniform(0.0, reward_scale, k) * 0.25
        if deterministic_init:
            nu = np.zeros(k)
            nu[rng.integers(k)] = 1.0
        else:
            nu = _rand_stochastic(rng, k, 1)[0]
        sites.append(SiteModel(p1, p0, r1, r0, nu))
    cost = rng.uniform(0.0, cost_scale, (n_sites, n_sites)) if cost_scale > 0 else np.zeros((n_sites, n_sites))
    return ProblemInstance(n_servers, sites, cost, discount, tuple(range(n_sites)),
                           name=f"random-{seed}")


# --- persistence -----------------------------------------------------------

def instance_to_dict(inst: ProblemInstance) -> dict:
    return {
        "format": FORMAT_VERSION,
        "name": inst.name,
        "n_sites": inst.n_sites,
        "n_servers": inst.n_servers,
        "discount": inst.discount,
        "initial_placement": [d + 1 for d in inst.initial_placement],
        "switch_cost": inst.switch_cost.tolist(),
        "sites": [
            {
                "active_transition": s.active_transition.tolist(),
                "passive_transition": s.passive_transition.tolist(),
                "active_reward": s.active_reward.tolist(),
                "passive_reward": s.passive_reward.tolist(),
                "initial_dist": s.initial_dist.tolist(),
            }
            for s in inst.sites
        ],
    }


def instance_from_dict(d: dict) -> ProblemInstance:
    if d.get("format") != FORMAT_VERSION:
        raise InvalidInstance(f"unsupported format tag {d.get('format')!r}")
    sites = [SiteModel(s["active_transition"], s["passive_transition"], s["active_reward"],
                       s["passive_reward"], s["initial_dist"]) for s in d["sites"]]
    if len(sites) != d["n_sites"]:
        raise InvalidInstance("n_sites does not match the number of site records")
    return ProblemInstance(d["n_servers"], sites, d["switch_cost"], d["discount"],
                           [v - 1 for v in d["initial_placement"]], name=d.get("name", ""))


def dumps_instance(inst: ProblemInstance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1)


def save_instance(inst: ProblemInstance, path):
    Path(path).write_text(dumps_instance(inst) + "\n", encoding="utf-8")


def load_instance(path) -> ProblemInstance:
    return instance_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
