"""Polynomial-size LP relaxation over per-agent marginals of the occupation measure.

Variables are indexed by ``MarginalKey(agent, anchor, site_state, from_site,
to_site)``.  An ``origin`` key carries the state of the site the agent leaves,
a ``destination`` key the (current) state of the site it moves to.  When
``from_site == to_site`` both readings are the same variable; it is stored
once, under the ``origin`` anchor.

Constraint families and their multipliers (each row is written as
``lhs - rhs = b`` of a maximisation; the multiplier is the shadow price):

* ``st0``  (agent, site, state)   per-agent flow balance      -> lambda
* ``compat`` (agent, from, to)    origin/destination totals   -> mu
* ``st1``  (site, state)          one agent per site           -> kappa
* ``st2``  (agent, to)            exclusion on destinations   -> zeta
* ``st3``  (agent, from)          exclusion on origins        -> xi

The ``compat`` rows with ``from == to`` are kept (so the family has N^3 rows)
but are empty after canonicalisation; their multipliers are reported as 0.

Optimal duals are rarely unique, and the lookahead policy depends on which one
is used.  Passive agents are interchangeable, yet a vertex dual need not treat
them alike.  ``solve_relaxation`` therefore selects, by default, the optimal
dual that is symmetric in the passive labels and has the smallest total of
``lambda``: the least optimistic value estimate the relaxation certifies.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .instance import ProblemInstance
from .lp_core import LpError, LpModel, solve_or_raise

log = logging.getLogger(__name__)

FAMILIES = ("st0", "compat", "st1", "st2", "st3")


class MarginalKey(NamedTuple):
    agent: int
    anchor: str  # "origin" | "destination"
    site_state: int
    from_site: int
    to_site: int


class RelaxationLayout:
    """Dense index tables ``orig_idx[i, s, a, x]`` and ``dest_idx[i, s, a, x]`` (-1 = padding)."""

    _cache: dict = {}

    def __init__(self, sizes):
        self.sizes = tuple(int(k) for k in sizes)
        n = self.n = len(self.sizes)
        kmax = self.kmax = max(self.sizes)
        self.orig_idx = np.full((n, n, n, kmax), -1, dtype=np.int64)
        self.dest_idx = np.full((n, n, n, kmax), -1, dtype=np.int64)
        keys = []
        v = 0
        for i in range(n):
            for s in range(n):
                for a in range(n):
                    ks, ka = self.sizes[s], self.sizes[a]
                    if s == a:
                        self.orig_idx[i, s, a, :ks] = self.dest_idx[i, s, a, :ks] = np.arange(v, v + ks)
                        keys += [MarginalKey(i, "origin", x, s, a) for x in range(ks)]
                        v += ks
                        continue
                    self.orig_idx[i, s, a, :ks] = np.arange(v, v + ks)
                    keys += [MarginalKey(i, "origin", x, s, a) for x in range(ks)]
                    v += ks
                    self.dest_idx[i, s, a, :ka] = np.arange(v, v + ka)
                    keys += [MarginalKey(i, "destination", x, s, a) for x in range(ka)]
                    v += ka
        self.keys = keys
        self.n_vars = v
        self._key_index = {k: j for j, k in enumerate(keys)}

    @classmethod
    def for_instance(cls, inst: ProblemInstance) -> "RelaxationLayout":
        sizes = inst.state_sizes
        if sizes not in cls._cache:
            cls._cache[sizes] = cls(sizes)
        return cls._cache[sizes]

    def canonical(self, key: MarginalKey) -> MarginalKey:
        key = MarginalKey(*key)
        if key.from_site == key.to_site and key.anchor == "destination":
            key = key._replace(anchor="origin")
        return key

    def index(self, key) -> int:
        try:
            return self._key_index[self.canonical(key)]
        except KeyError:
            raise KeyError(f"unknown marginal key {key}") from None


@dataclass(frozen=True, eq=False)
class Marginals:
    layout: RelaxationLayout
    values: np.ndarray

    def origin(self, i, s, a) -> np.ndarray:
        idx = self.layout.orig_idx[i, s, a, : self.layout.sizes[s]]
        return self.values[idx]

    def dest(self, i, s, a) -> np.ndarray:
        idx = self.layout.dest_idx[i, s, a, : self.layout.sizes[a]]
        return self.values[idx]

    def __getitem__(self, key) -> float:
        return float(self.values[self.layout.index(key)])


class RowIndex:
    """Row offsets of each constraint family in the relaxation LP."""

    def __init__(self, sizes):
        n = len(sizes)
        kmax = max(sizes)
        self.st0 = np.full((n, n, kmax), -1, dtype=np.int64)
        r = 0
        for i in range(n):
            for s in range(n):
                self.st0[i, s, : sizes[s]] = np.arange(r, r + sizes[s])
                r += sizes[s]
        self.compat = r + np.arange(n ** 3).reshape(n, n, n)
        r += n ** 3
        self.st1 = np.full((n, kmax), -1, dtype=np.int64)
        for j in range(n):
            self.st1[j, : sizes[j]] = np.arange(r, r + sizes[j])
            r += sizes[j]
        self.st2 = r + np.arange(n * n).reshape(n, n)
        r += n * n
        self.st3 = r + np.arange(n * n).reshape(n, n)
        r += n * n
        self.n_rows = r
        bounds = [0, int(self.compat.min()), int(self.st1[self.st1 >= 0].min()),
                  int(self.st2.min()), int(self.st3.min()), r]
        self.family_ranges = {f: (bounds[k], bounds[k + 1]) for k, f in enumerate(FAMILIES)}


def _transition_tables(inst):
    """p[i_active][s] for each site; returns a function (agent, site) -> matrix."""
    def p(agent, site):
        return inst.sites[site].transition(agent < inst.n_servers)
    return p


def build_relaxation(inst: ProblemInstance) -> LpModel:
    inst.check()
    lay = RelaxationLayout.for_instance(inst)
    sizes = lay.sizes
    n, m, alpha = inst.n_sites, inst.n_servers, inst.discount
    rows_ix = RowIndex(sizes)
    p = _transition_tables(inst)
    R, C, V = [], [], []

    def put(r, c, v):
        r, c = np.broadcast_arrays(np.asarray(r), np.asarray(c))
        v = np.broadcast_to(np.asarray(v, dtype=float), r.shape)
        ok = (r >= 0) & (c >= 0)
        R.append(r[ok])
        C.append(c[ok])
        V.append(v[ok])

    # st0: sum_a rho^i_(x_s;s),a - alpha sum_{s', x~} rho^i_(x~;s'),s p(x~ -> x_s) = rhs
    for i in range(n):
        for s in range(n):
            k = sizes[s]
            st0 = rows_ix.st0[i, s, :k]
            put(st0[None, :], lay.orig_idx[i, s, :, :k], 1.0)
            inflow = lay.dest_idx[i, :, s, :k]  # (s', x~)
            ps = p(i, s)
            put(st0[None, None, :], inflow[:, :, None], -alpha * ps[None, :, :])
    # compat: sum_x rho^i_(x_s;s),a - sum_x rho^i_(x_a;s),a = 0
    for i in range(n):
        for s in range(n):
            for a in range(n):
                if s == a:
                    continue
                r = rows_ix.compat[i, s, a]
                put(r, lay.orig_idx[i, s, a, : sizes[s]], 1.0)
                put(r, lay.dest_idx[i, s, a, : sizes[a]], -1.0)
    # st1: flow out of (j, x) equals flow into (j, x)
    for j in range(n):
        k = sizes[j]
        st1 = rows_ix.st1[j, :k]
        put(st1[None, None, :], lay.orig_idx[:, j, :, :k], 1.0)
        put(st1[None, None, :], lay.dest_idx[:, :, j, :k], -1.0)
    # st2 (i, a~): agent i avoids a~ as often as some other agent goes there
    for i in range(n):
        for at in range(n):
            r = rows_ix.st2[i, at]
            others = [a for a in range(n) if a != at]
            put(r, lay.orig_idx[i][:, others], 1.0)
            ks = [k for k in range(n) if k != i]
            put(r, lay.orig_idx[ks][:, :, at], -1.0)
    # st3 (i, s~): agent i does not leave s~ as often as some other agent leaves it
    for i in range(n):
        for st in range(n):
            r = rows_ix.st3[i, st]
            others = [s for s in range(n) if s != st]
            put(r, lay.dest_idx[i][others], 1.0)
            ks = [k for k in range(n) if k != i]
            put(r, lay.dest_idx[ks][:, st], -1.0)

    mat = sp.coo_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))),
                        shape=(rows_ix.n_rows, lay.n_vars)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()

    obj = np.zeros(lay.n_vars)
    for i in range(n):
        act = i < m
        for s in range(n):
            for a in range(n):
                ka = sizes[a]
                r = inst.sites[a].reward(act)
                obj[lay.dest_idx[i, s, a, :ka]] = r - (inst.switch_cost[s, a] if act else 0.0)

    rhs = np.zeros(rows_ix.n_rows)
    for i in range(n):
        d = inst.initial_placement[i]
        rhs[rows_ix.st0[i, d, : sizes[d]]] = (1 - alpha) * inst.sites[d].initial_dist

    row_names = []
    for f in FAMILIES:
        lo, hi = rows_ix.family_ranges[f]
        row_names += [(f, r) for r in range(lo, hi)]
    families = {f: np.arange(*rows_ix.family_ranges[f]) for f in FAMILIES}
    return LpModel(lay.keys, np.zeros(lay.n_vars), np.full(lay.n_vars, np.inf), obj, mat,
                   ["="] * rows_ix.n_rows, rhs, row_names, maximize=True, families=families)


@dataclass(frozen=True, eq=False)
class RelaxationSolution:
    inst: ProblemInstance
    layout: RelaxationLayout
    rows: RowIndex
    objective: float  # value scale: LP optimum / (1 - alpha)
    lp_objective: float
    rho: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    instance_digest: str

    @property
    def rho_bar(self) -> Marginals:
        return Marginals(self.layout, self.rho)

    @property
    def gamma_bar(self) -> Marginals:
        return Marginals(self.layout, self.reduced_costs)

    # multipliers, padded with zeros beyond each site's state count
    @property
    def lam(self) -> np.ndarray:
        """lambda[i, s, x]."""
        return np.where(self.rows.st0 >= 0, self.duals[np.maximum(self.rows.st0, 0)], 0.0)

    @property
    def mu(self) -> np.ndarray:
        return self.duals[self.rows.compat]

    @property
    def kappa(self) -> np.ndarray:
        """kappa[s, x]."""
        return np.where(self.rows.st1 >= 0, self.duals[np.maximum(self.rows.st1, 0)], 0.0)

    @property
    def zeta(self) -> np.ndarray:
        """zeta[i, a]."""
        return self.duals[self.rows.st2]

    @property
    def xi(self) -> np.ndarray:
        """xi[i, s]."""
        return self.duals[self.rows.st3]

    def check_instance(self, inst: ProblemInstance):
        if inst.digest() != self.instance_digest:
            raise ValueError("relaxation solution was computed for a different instance")

    def save(self, path):
        doc = {
            "format": "rbpsc-relaxation-v1",
            "instance_sha256": self.instance_digest,
            "objective": self.objective,
            "lp_objective": self.lp_objective,
            "rho": self.rho.tolist(),
            "duals": self.duals.tolist(),
            "reduced_costs": self.reduced_costs.tolist(),
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path, inst: ProblemInstance) -> "RelaxationSolution":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("instance_sha256") != inst.digest():
            raise ValueError(f"{path} was computed for a different instance")
        lay = RelaxationLayout.for_instance(inst)
        return cls(inst, lay, RowIndex(lay.sizes), doc["objective"], doc["lp_objective"],
                   np.array(doc["rho"]), np.array(doc["duals"]),
                   np.array(doc["reduced_costs"]), doc["instance_sha256"])


def passive_row_groups(rows: RowIndex, n_servers: int) -> np.ndarray:
    """Group label per row; agent-indexed rows of all passive agents share labels."""
    rep = np.arange(rows.n_rows)
    n = rows.st0.shape[0]
    for fam in ("st0", "compat", "st2", "st3"):
        idx = getattr(rows, fam)
        for i in range(n_servers + 1, n):
            ok = idx[i] >= 0
            rep[idx[i][ok]] = idx[n_servers][ok]
    return np.unique(rep, return_inverse=True)[1]


def _merge_matrix(rows: RowIndex, n_servers: int):
    group = passive_row_groups(rows, n_servers)
    n_groups = int(group.max()) + 1
    S = sp.csr_matrix((np.ones(rows.n_rows), (group, np.arange(rows.n_rows))),
                      shape=(n_groups, rows.n_rows))
    return group, S


def _symmetric_duals(model: LpModel, rows: RowIndex, n_servers: int, method: str):
    group, S = _merge_matrix(rows, n_servers)
    first = np.full(S.shape[0], -1)
    first[group[::-1]] = np.arange(rows.n_rows)[::-1]
    merged = replace(model, matrix=(S @ model.matrix).tocsr(), rhs=S @ model.rhs,
                     senses=[model.senses[r] for r in first],
                     row_names=[model.row_names[r] for r in first], families={})
    sol = solve_or_raise(merged, method)
    return sol.objective, sol.dual[group]


def _min_lambda_duals(model: LpModel, rows: RowIndex, n_servers: int, rho: np.ndarray,
                      method: str, band: float = 1e-8):
    """Passive-symmetric optimal dual minimising the sum of the st0 multipliers.

    Optimal duals are the feasible ones complementary to the optimal ``rho``:
    min w.z  s.t.  (S A)^T z - c >= 0, and <= band * max|c| where rho > 0.
    """
    group, S = _merge_matrix(rows, n_servers)
    n_groups = S.shape[0]
    w = np.zeros(rows.n_rows)
    w[rows.st0.ravel()[rows.st0.ravel() >= 0]] = 1.0
    At = (S @ model.matrix).T.tocsr()
    support = np.flatnonzero(rho > 1e-9)
    band *= max(1.0, np.abs(model.objective).max())
    sel = LpModel([f"z{k}" for k in range(n_groups)], np.full(n_groups, -np.inf),
                  np.full(n_groups, np.inf), S @ w, sp.vstack([At, At[support]]).tocsr(),
                  [">="] * model.n_vars + ["<="] * len(support),
                  np.concatenate([model.objective, model.objective[support] + band]),
                  [f"feas{v}" for v in range(model.n_vars)] + [f"cs{v}" for v in support],
                  maximize=False)
    return solve_or_raise(sel, method).primal[group]


DUAL_RULES = ("min_lambda", "symmetric", "vertex")


def solve_relaxation(inst: ProblemInstance, model: LpModel | None = None,
                     method: str = "auto", duals: str = "min_lambda") -> RelaxationSolution:
    """Solve the relaxation and pin one optimal dual.

    ``duals`` picks the rule: ``vertex`` keeps the solver's basic dual,
    ``symmetric`` re-solves with passive agents' rows merged, ``min_lambda``
    additionally minimises the sum of the st0 multipliers over all optimal duals.
    """
    if duals not in DUAL_RULES:
        raise ValueError(f"duals must be one of {DUAL_RULES}, got {duals!r}")
    model = model or build_relaxation(inst)
    sol = solve_or_raise(model, method)
    lay = RelaxationLayout.for_instance(inst)
    rows = RowIndex(lay.sizes)
    m = inst.n_servers
    y, rule = sol.dual.copy(), duals
    if rule == "min_lambda":
        try:
            y = _min_lambda_duals(model, rows, m, sol.primal, method)
        except LpError as exc:
            log.warning("dual selection failed (%s); using passive-symmetric duals", exc)
            rule = "symmetric"
    if rule == "symmetric" and inst.n_sites - m >= 2:
        obj, z = _symmetric_duals(model, rows, m, method)
        # merging rows can only relax the primal; equal optima mean z is optimal here too
        if abs(obj - sol.objective) <= 1e-7 * (1 + abs(sol.objective)):
            y = z
        else:
            log.warning("merged-passive LP optimum %.9g differs from %.9g; keeping vertex duals",
                        obj, sol.objective)
    diag = np.arange(inst.n_sites)
    y[rows.compat[:, diag, diag]] = 0.0
    reduced = model.matrix.T @ y - model.objective
    return RelaxationSolution(inst, lay, rows, sol.objective / (1 - inst.discount),
                              sol.objective, sol.primal.copy(), y, reduced, inst.digest())


def reduced_cost_recompute(sol: RelaxationSolution, key) -> float:
    """Reduced cost of one marginal from the stored multipliers (closed form)."""
    inst = sol.inst
    key = sol.layout.canonical(key)
    sol.layout.index(key)  # raises on unknown keys
    i, x, s, a = key.agent, key.site_state, key.from_site, key.to_site
    act = i < inst.n_servers
    lam, kap, zeta, xi, mu = sol.lam, sol.kappa, sol.zeta, sol.xi, sol.mu
    # sum_{i' != i} z[i', t] and sum_{t' != t} z[i, t']
    def others(z, t):
        return z[:, t].sum() - z[i, t]

    def elsewhere(z, t):
        return z[i].sum() - z[i, t]

    if s == a:
        ks = inst.sites[s].state_count
        lhs = (lam[i, s, x] - inst.discount * inst.sites[s].transition(act)[x] @ lam[i, s, :ks]
               - others(zeta, s) - others(xi, s) + elsewhere(zeta, s) + elsewhere(xi, s))
        rhs = inst.sites[s].reward(act)[x] - (inst.switch_cost[s, s] if act else 0.0)
        return float(lhs - rhs)
    if key.anchor == "origin":
        return float(lam[i, s, x] + mu[i, s, a] + kap[s, x] - others(zeta, a) + elsewhere(zeta, a))
    ka = inst.sites[a].state_count
    lhs = (-inst.discount * inst.sites[a].transition(act)[x] @ lam[i, a, :ka] - mu[i, s, a]
           - kap[a, x] - others(xi, s) + elsewhere(xi, s))
    rhs = inst.sites[a].reward(act)[x] - (inst.switch_cost[s, a] if act else 0.0)
    return float(lhs - rhs)


def verify_marginal_feasibility(inst: ProblemInstance, marginals) -> dict:
    """Max absolute residual per constraint family (plus ``nonneg``), by direct summation."""
    lay = RelaxationLayout.for_instance(inst)
    vals = marginals.values if isinstance(marginals, Marginals) else np.asarray(marginals, float)
    if vals.shape != (lay.n_vars,):
        raise ValueError(f"expected {lay.n_vars} marginal values, got shape {vals.shape}")
    mg = Marginals(lay, vals)
    n, m, alpha = inst.n_sites, inst.n_servers, inst.discount
    tot_o = np.zeros((n, n, n))
    tot_d = np.zeros((n, n, n))
    for i in range(n):
        for s in range(n):
            for a in range(n):
                tot_o[i, s, a] = mg.origin(i, s, a).sum()
                tot_d[i, s, a] = mg.dest(i, s, a).sum()
    res = dict.fromkeys(FAMILIES, 0.0)
    for i in range(n):
        p_act = i < m
        for s in range(n):
            out = sum(mg.origin(i, s, a) for a in range(n))
            into = sum(mg.dest(i, sp_, s) for sp_ in range(n)) @ inst.sites[s].transition(p_act)
            rhs = (1 - alpha) * inst.sites[s].initial_dist * (inst.initial_placement[i] == s)
            res["st0"] = max(res["st0"], np.abs(out - alpha * into - rhs).max())
    res["compat"] = float(np.abs(tot_o - tot_d).max())
    for j in range(n):
        leave = sum(mg.origin(i, j, a) for i in range(n) for a in range(n))
        arrive = sum(mg.dest(i, s, j) for i in range(n) for s in range(n))
        res["st1"] = max(res["st1"], np.abs(leave - arrive).max())
    for i in range(n):
        rest = [k for k in range(n) if k != i]
        for t in range(n):
            lhs2 = tot_o[i].sum() - tot_o[i, :, t].sum()
            rhs2 = tot_o[rest][:, :, t].sum()
            res["st2"] = max(res["st2"], abs(lhs2 - rhs2))
            lhs3 = tot_d[i].sum() - tot_d[i, t, :].sum()
            rhs3 = tot_d[rest][:, t, :].sum()
            res["st3"] = max(res["st3"], abs(lhs3 - rhs3))
    res = {k: float(v) for k, v in res.items()}
    res["nonneg"] = float(max(0.0, -vals.min(initial=0.0)))
    return res
