"""Assignment-based policies: one-step lookahead, primal-dual, greedy, random.

Every policy maps ``(x, s)`` to the next placement ``a`` by solving an N x N
linear assignment.  Ties are broken towards the lexicographically smallest
permutation, in both optimisation senses, so that policies built from the
same relaxation solution can be compared action for action.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .instance import ProblemInstance
from .relaxation import RelaxationSolution

KINDS = ("one_step_lookahead", "primal_dual", "greedy", "random")


@dataclass(frozen=True)
class ScoreMatrix:
    entries: np.ndarray
    maximize: bool = True


def _shortest_augmenting_path(cost: np.ndarray):
    """Min-cost assignment. Returns (col_of_row, u, v) with cost - u[:,None] - v >= 0."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=int)  # owner[j] = 1-based row on column j, 0 = free
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            cols = np.flatnonzero(used)
            u[owner[cols]] += delta
            v[cols] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=int)
    col_of_row[owner[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _reroute(tight, match, owner, fixed_cols, i, a):
    """Move row ``i`` onto column ``a`` through an alternating path of tight edges."""
    k, target = owner[a], match[i]
    parent = {}  # column -> row that reached it
    frontier = [k]
    seen_rows = {k}
    while frontier:
        nxt = []
        for r in frontier:
            for j in np.flatnonzero(tight[r]):
                if j == a or fixed_cols[j] or j in parent:
                    continue
                parent[j] = r
                if j == target:
                    # unwind: each row on the path takes the column it reached
                    col = j
                    while True:
                        row = parent[col]
                        prev = match[row]
                        match[row], owner[col] = col, row
                        if row == k:
                            break
                        col = prev
                    match[i], owner[a] = a, i
                    return True
                nr = owner[j]
                if nr != i and nr not in seen_rows:
                    seen_rows.add(nr)
                    nxt.append(nr)
        frontier = nxt
    return False


def hungarian(scores, maximize: bool | None = None, rtol: float = 1e-9):
    """Optimal assignment, lexicographically smallest among (near-)optimal ones.

    Returns ``(perm, value)`` with ``perm[i]`` the column of row ``i``.
    """
    if isinstance(scores, ScoreMatrix):
        maximize = scores.maximize if maximize is None else maximize
        scores = scores.entries
    maximize = True if maximize is None else maximize
    m = np.asarray(scores, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"assignment needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("assignment scores must be finite")
    n = m.shape[0]
    if n == 0:
        return (), 0.0
    cost = -m if maximize else m
    cost = cost - cost.min()
    match, u, v = _shortest_augmenting_path(cost)
    tol = rtol * max(1.0, np.abs(cost).max())
    tight = (cost - u[:, None] - v[None, :]) <= tol
    tight[np.arange(n), match] = True
    owner = np.empty(n, dtype=int)
    owner[match] = np.arange(n)
    fixed_cols = np.zeros(n, dtype=bool)
    for i in range(n):
        for a in np.flatnonzero(tight[i]):
            if a >= match[i]:
                break
            if not fixed_cols[a] and _reroute(tight, match, owner, fixed_cols, i, a):
                break
        fixed_cols[match[i]] = True
    perm = tuple(int(j) for j in match)
    return perm, float(m[np.arange(n), match].sum())


# --- relaxation-derived tables ----------------------------------------------

@lru_cache(maxsize=16)
def _reward_tables(inst: ProblemInstance):
    n, kmax = inst.n_sites, max(inst.state_sizes)
    rew = np.zeros((2, n, kmax))
    for j, site in enumerate(inst.sites):
        rew[0, j, : site.state_count] = site.passive_reward
        rew[1, j, : site.state_count] = site.active_reward
    active = (np.arange(n) < inst.n_servers).astype(int)
    return rew, active


@lru_cache(maxsize=16)
def _lookahead_tables(rel: RelaxationSolution):
    """future[i, a, x] = alpha * sum_x' p^{active(i)}_a[x, x'] * lambda[i, a, x']."""
    inst = rel.inst
    n, kmax = inst.n_sites, rel.layout.kmax
    lam = rel.lam
    fut = np.zeros((n, n, kmax))
    for i in range(n):
        for a, site in enumerate(inst.sites):
            k = site.state_count
            fut[i, a, :k] = inst.discount * site.transition(i < inst.n_servers) @ lam[i, a, :k]
    return fut


@lru_cache(maxsize=16)
def _gamma_tables(rel: RelaxationSolution):
    lay, rc = rel.layout, rel.reduced_costs
    go = np.where(lay.orig_idx >= 0, rc[np.maximum(lay.orig_idx, 0)], 0.0)
    gd = np.where(lay.dest_idx >= 0, rc[np.maximum(lay.dest_idx, 0)], 0.0)
    n = lay.n
    diag = np.arange(n)
    gd[:, diag, diag, :] = 0.0  # s == a: the shared variable is counted once, via go
    return go, gd


def _check(inst: ProblemInstance, rel: RelaxationSolution):
    if rel.inst is not inst:
        rel.check_instance(inst)


def immediate_scores(inst: ProblemInstance, x, s) -> np.ndarray:
    rew, active = _reward_tables(inst)
    x = np.asarray(x)
    s = np.asarray(s)
    sites = np.arange(inst.n_sites)
    gain = rew[active[:, None], sites[None, :], x[None, :]]
    cost = inst.switch_cost[s[:, None], sites[None, :]] * active[:, None]
    return gain - cost


def osl_scores(inst: ProblemInstance, rel: RelaxationSolution, x, s) -> ScoreMatrix:
    _check(inst, rel)
    fut = _lookahead_tables(rel)
    sites = np.arange(inst.n_sites)
    m = immediate_scores(inst, x, s) + fut[:, sites, np.asarray(x)]
    return ScoreMatrix(m, maximize=True)


def osl_action(inst, rel, x, s) -> tuple:
    return hungarian(osl_scores(inst, rel, x, s))[0]


def pd_scores(inst: ProblemInstance, rel: RelaxationSolution, x, s) -> ScoreMatrix:
    """g[i, a]: reduced costs charged when agent i moves from s_i to a."""
    _check(inst, rel)
    go, gd = _gamma_tables(rel)
    x = np.asarray(x)
    s = np.asarray(s)
    agents = np.arange(inst.n_sites)
    sites = agents
    g = go[agents[:, None], s[:, None], sites[None, :], x[s][:, None]]
    g = g + gd[agents[:, None], s[:, None], sites[None, :], x[None, :]]
    return ScoreMatrix(g, maximize=False)


def pd_index(inst, rel, x, s, a) -> float:
    g = pd_scores(inst, rel, x, s).entries
    return float(g[np.arange(inst.n_sites), np.asarray(a)].sum())


def pd_action(inst, rel, x, s) -> tuple:
    return hungarian(pd_scores(inst, rel, x, s))[0]


def greedy_action(inst, x, s) -> tuple:
    return hungarian(ScoreMatrix(immediate_scores(inst, x, s), maximize=True))[0]


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    relaxation: RelaxationSolution | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("one_step_lookahead", "primal_dual") and self.relaxation is None:
            raise ValueError(f"{self.kind} needs a solved relaxation")
        if self.kind == "random" and self.seed is None:
            raise ValueError("random policy needs a seed")


class Policy:
    """Stationary policy ``(x, s) -> a`` with a per-state action cache."""

    def __init__(self, inst: ProblemInstance, spec: PolicySpec):
        self.inst = inst
        self.spec = spec
        self._cache = {}
        if spec.relaxation is not None:
            _check(inst, spec.relaxation)
        if spec.kind == "random":
            self._rng = np.random.default_rng(spec.seed)

    def __call__(self, x, s) -> tuple:
        kind = self.spec.kind
        if kind == "random":
            return tuple(int(v) for v in self._rng.permutation(self.inst.n_sites))
        key = (tuple(int(v) for v in x), tuple(int(v) for v in s))
        a = self._cache.get(key)
        if a is None:
            if kind == "one_step_lookahead":
                a = osl_action(self.inst, self.spec.relaxation, *key)
            elif kind == "primal_dual":
                a = pd_action(self.inst, self.spec.relaxation, *key)
            else:
                a = greedy_action(self.inst, *key)
            self._cache[key] = a
        return a


def make_policy(inst: ProblemInstance, kind: str, relaxation=None, seed=None) -> Policy:
    return Policy(inst, PolicySpec(kind, relaxation, seed))
