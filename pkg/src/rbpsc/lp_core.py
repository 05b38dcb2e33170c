"""Sparse linear programs with primal, dual and reduced-cost certificates.

Conventions (both senses):

* ``dual[c]`` is the shadow price d(objective)/d(rhs_c).
* ``reduced_cost[v]`` is the rate at which the objective degrades per unit
  increase of ``v``; for a maximisation that is ``A^T y - c`` and for a
  minimisation ``c - A^T y``.  It is >= 0 at a lower bound, <= 0 at an upper.

The numerical work is done by HiGHS (dual simplex) through
``scipy.optimize.linprog``; everything reported back is re-checked here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

SENSES = ("=", "<=", ">=")
PRIMAL_TOL = 1e-7
DUAL_TOL = 1e-7
GAP_TOL = 1e-6
# above this many variables or rows the interior point code (with crossover) is much faster
IPM_THRESHOLD = 20_000

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


@dataclass
class LpModel:
    """A linear program ``opt c^T v  s.t.  A v (sense) b,  lb <= v <= ub``."""

    var_names: list
    lower: np.ndarray
    upper: np.ndarray
    objective: np.ndarray
    matrix: sp.csr_matrix
    senses: list
    rhs: np.ndarray
    row_names: list
    maximize: bool = True
    families: dict = field(default_factory=dict)

    def __post_init__(self):
        n, m = len(self.var_names), len(self.row_names)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.objective = np.asarray(self.objective, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.matrix = sp.csr_matrix(self.matrix, dtype=float)
        if self.matrix.shape != (m, n):
            raise ValueError(f"matrix shape {self.matrix.shape} != ({m}, {n})")
        for name, arr, size in (("lower", self.lower, n), ("upper", self.upper, n),
                                ("objective", self.objective, n), ("rhs", self.rhs, m)):
            if arr.shape != (size,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({size},)")
        if len(self.senses) != m or any(s not in SENSES for s in self.senses):
            raise ValueError("every constraint needs a sense in {'=', '<=', '>='}")
        if len(set(self.var_names)) != n:
            raise ValueError("duplicate variable identifiers")
        if len(set(self.row_names)) != m:
            raise ValueError("duplicate constraint identifiers")

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)


class LpBuilder:
    """Incremental construction by identifier, for hand-written models."""

    def __init__(self, maximize=True):
        self.maximize = maximize
        self._vars = {}
        self._lb, self._ub, self._obj = [], [], []
        self._rows = []

    def add_variable(self, name, lower=0.0, upper=np.inf, objective=0.0):
        if name in self._vars:
            raise ValueError(f"duplicate variable {name!r}")
        self._vars[name] = len(self._vars)
        self._lb.append(lower)
        self._ub.append(upper)
        self._obj.append(objective)
        return name

    def add_constraint(self, name, coeffs: dict, sense, rhs):
        if sense not in SENSES:
            raise ValueError(f"bad sense {sense!r}")
        unknown = [v for v in coeffs if v not in self._vars]
        if unknown:
            raise KeyError(f"constraint {name!r} references undeclared variables {unknown}")
        self._rows.append((name, coeffs, sense, rhs))

    def build(self) -> LpModel:
        rows, cols, vals = [], [], []
        for r, (_, coeffs, _, _) in enumerate(self._rows):
            for v, a in coeffs.items():
                rows.append(r)
                cols.append(self._vars[v])
                vals.append(a)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(self._rows), len(self._vars)))
        return LpModel(list(self._vars), self._lb, self._ub, self._obj, mat,
                       [r[2] for r in self._rows], [r[3] for r in self._rows],
                       [r[0] for r in self._rows], self.maximize)


@dataclass(frozen=True)
class LpSolution:
    status: str  # optimal | infeasible | unbounded | numerical_failure
    objective: float = np.nan
    primal: np.ndarray = None
    dual: np.ndarray = None
    reduced_cost: np.ndarray = None
    residuals: dict = field(default_factory=dict)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class LpError(RuntimeError):
    def __init__(self, solution: LpSolution):
        super().__init__(f"LP not solved to optimality: {solution.status} "
                         f"({solution.message}) residuals={solution.residuals}")
        self.solution = solution


def certify(model: LpModel, x, y, d) -> dict:
    """Primal/dual feasibility, strong duality and complementary-slackness residuals."""
    A, b, c = model.matrix, model.rhs, model.objective
    ax = A @ x
    viol = np.zeros(model.n_rows)
    for k, sense in enumerate(model.senses):
        if sense == "=":
            viol[k] = abs(ax[k] - b[k])
        elif sense == "<=":
            viol[k] = max(ax[k] - b[k], 0.0)
        else:
            viol[k] = max(b[k] - ax[k], 0.0)
    bound_viol = np.maximum(model.lower - x, 0.0).max(initial=0.0)
    bound_viol = max(bound_viol, np.maximum(x - model.upper, 0.0).max(initial=0.0))
    primal = max(viol.max(initial=0.0), bound_viol)

    sgn = 1.0 if model.maximize else -1.0
    # y sign: for max, a binding <= row has y >= 0, >= row has y <= 0
    ysign = np.zeros(model.n_rows)
    for k, sense in enumerate(model.senses):
        if sense == "<=":
            ysign[k] = max(-sgn * y[k], 0.0)
        elif sense == ">=":
            ysign[k] = max(sgn * y[k], 0.0)
    at_lb = np.isfinite(model.lower)
    at_ub = np.isfinite(model.upper)
    # d >= 0 allowed only where a finite lower bound exists, d <= 0 only at a finite upper
    dviol = np.where(at_lb, 0.0, np.maximum(d, 0.0)) + np.where(at_ub, 0.0, np.maximum(-d, 0.0))
    recompute = sgn * (A.T @ y - c)
    dual = max(ysign.max(initial=0.0), dviol.max(initial=0.0),
               np.abs(recompute - d).max(initial=0.0))

    obj = c @ x
    dual_obj = b @ y - (np.where(d > 0, np.where(at_lb, model.lower, 0.0), 0.0) @ d
                        + np.where(d < 0, np.where(at_ub, model.upper, 0.0), 0.0) @ d) * sgn
    gap = abs(obj - dual_obj)

    dist = np.minimum(np.abs(x - np.where(at_lb, model.lower, np.inf)),
                      np.abs(x - np.where(at_ub, model.upper, np.inf)))
    dist = np.where(np.isfinite(dist), dist, np.abs(x))
    slack = (dist * np.abs(d)).max(initial=0.0)
    row_slack = np.abs((ax - b) * y).max(initial=0.0)
    return {"primal": float(primal), "dual": float(dual), "gap": float(gap),
            "compl": float(max(slack, row_slack))}


def _pick_method(model: LpModel, method: str) -> str:
    if method == "auto":
        big = max(model.n_vars, model.n_rows) > IPM_THRESHOLD
        return "highs-ipm" if big else "highs-ds"
    if method not in ("highs-ds", "highs-ipm", "highs"):
        raise ValueError(f"unknown LP method {method!r}")
    return method


def solve_lp(model: LpModel, method: str = "auto") -> LpSolution:
    """Solve with HiGHS and attach residual certificates.

    ``method="auto"`` uses dual simplex on small models and interior point with
    crossover on large ones; both return a basic solution.
    """
    sgn = 1.0 if model.maximize else -1.0
    c_min = -sgn * model.objective
    A = model.matrix
    senses = np.array(model.senses)
    eq = np.flatnonzero(senses == "=")
    le = np.flatnonzero(senses == "<=")
    ge = np.flatnonzero(senses == ">=")
    ub_rows = np.concatenate([le, ge])
    flip = np.concatenate([np.ones(len(le)), -np.ones(len(ge))])
    A_ub = sp.diags(flip) @ A[ub_rows] if len(ub_rows) else None
    b_ub = flip * model.rhs[ub_rows] if len(ub_rows) else None
    A_eq = A[eq] if len(eq) else None
    b_eq = model.rhs[eq] if len(eq) else None
    bounds = np.column_stack([
        np.where(np.isfinite(model.lower), model.lower, -np.inf),
        np.where(np.isfinite(model.upper), model.upper, np.inf),
    ])
    res = linprog(c_min, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
                          for lo, hi in bounds],
                  method=_pick_method(model, method), options=_HIGHS_OPTIONS)
    if res.status == 2:
        return LpSolution("infeasible", message=res.message)
    if res.status == 3:
        return LpSolution("unbounded", message=res.message)
    if res.status != 0:
        return LpSolution("numerical_failure", message=res.message)

    x = np.asarray(res.x, dtype=float)
    y = np.zeros(model.n_rows)
    # scipy marginals are d(min objective)/d(b); shadow price of the user model is -sgn * that
    if len(eq):
        y[eq] = -sgn * res.eqlin.marginals
    if len(ub_rows):
        y[ub_rows] = -sgn * flip * res.ineqlin.marginals
    d = sgn * (A.T @ y - model.objective)
    sol_obj = float(model.objective @ x)
    resid = certify(model, x, y, d)
    ok = (resid["primal"] <= PRIMAL_TOL and resid["dual"] <= DUAL_TOL
          and resid["gap"] <= GAP_TOL * (1 + abs(sol_obj)))
    status = "optimal" if ok else "numerical_failure"
    return LpSolution(status, sol_obj, x, y, d, resid, res.message)


def solve_or_raise(model: LpModel, method: str = "auto") -> LpSolution:
    sol = solve_lp(model, method)
    if not sol.optimal:
        raise LpError(sol)
    return sol


def write_mps(model: LpModel, path):
    """Free-format MPS export (objective row ``OBJ``; maximisation via OBJSENSE)."""
    tag = {"=": "E", "<=": "L", ">=": "G"}
    vname = [f"C{j}" for j in range(model.n_vars)]
    rname = [f"R{k}" for k in range(model.n_rows)]
    csc = model.matrix.tocsc()
    lines = ["NAME rbpsc", "OBJSENSE", "    MAX" if model.maximize else "    MIN", "ROWS", " N OBJ"]
    lines += [f" {tag[s]} {r}" for s, r in zip(model.senses, rname)]
    lines.append("COLUMNS")
    for j in range(model.n_vars):
        if model.objective[j] != 0:
            lines.append(f" {vname[j]} OBJ {float(model.objective[j])!r}")
        for p in range(csc.indptr[j], csc.indptr[j + 1]):
            lines.append(f" {vname[j]} {rname[csc.indices[p]]} {float(csc.data[p])!r}")
    lines.append("RHS")
    lines += [f" RHS {r} {float(v)!r}" for r, v in zip(rname, model.rhs) if v != 0]
    lines.append("BOUNDS")
    for j in range(model.n_vars):
        lo, hi = model.lower[j], model.upper[j]
        if lo == hi:
            lines.append(f" FX BND {vname[j]} {float(lo)!r}")
            continue
        if not np.isfinite(lo):
            lines.append(f" MI BND {vname[j]}")
        elif lo != 0:
            lines.append(f" LO BND {vname[j]} {float(lo)!r}")
        if np.isfinite(hi):
            lines.append(f" UP BND {vname[j]} {float(hi)!r}")
    lines.append("ENDATA")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
