"""Benchmark runner and command-line entry point.

    rbpsc gen --suite P4 --alpha 0.9 --out p4.json
    rbpsc relax --instance p4.json --out p4.relax.json
    rbpsc simulate --instance p4.json --policy one_step_lookahead --trajectories 2000
    rbpsc bench --suite P1 P2 --alpha 0.5 0.9 --out results.csv
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .bounds import adp_gap_bound
from .exact_mdp import GuardExceeded, JointIndexer, solve_exact
from .instance import (ProblemInstance, generate_random_instance, load_instance,
                       save_instance)
from .policies import KINDS, make_policy
from .relaxation import RelaxationSolution, solve_relaxation
from .simulate import SimConfig, evaluate_policy, write_trajectory_log
from .suites import BENCHMARK_SUITES, SuiteSpec, realised_ratio, suite_by_name

log = logging.getLogger("rbpsc")

CSV_HEADER = ("problem,N,M,states,c_over_r,alpha,Z_star,Z_r,Z_g,Z_g_se,Z_osl,Z_osl_se,"
              "bound_slack,t_relax_s,t_sim_s")
COLUMNS = tuple(CSV_HEADER.split(","))
DEFAULT_MAX_EXACT_STATES = 20_000


@dataclass(frozen=True)
class ExperimentConfig:
    suites: tuple = ()  # SuiteSpec generators
    instance_paths: tuple = ()
    alphas: tuple = (0.9,)
    policies: tuple = ("greedy", "one_step_lookahead")
    sim: SimConfig = field(default_factory=SimConfig)
    exact: bool = True
    max_exact_states: int = DEFAULT_MAX_EXACT_STATES
    out: str | None = None
    master_seed: int = 0
    workers: int = 1
    timings: bool = True  # off => byte-identical reruns

    def __post_init__(self):
        if not self.suites and not self.instance_paths:
            raise ValueError("experiment needs at least one instance or suite")
        if not self.alphas:
            raise ValueError("experiment needs at least one discount factor")
        for a in self.alphas:
            if not 0 < a < 1:
                raise ValueError(f"discount {a} outside (0, 1)")
        for p in self.policies:
            if p not in ("greedy", "one_step_lookahead"):
                raise ValueError(f"bench reports greedy and one_step_lookahead only, got {p!r}")


@dataclass
class ResultRow:
    problem: str
    N: int
    M: int
    states: str
    c_over_r: float | None = None
    alpha: float | None = None
    Z_star: float | None = None
    Z_r: float | None = None
    Z_g: float | None = None
    Z_g_se: float | None = None
    Z_osl: float | None = None
    Z_osl_se: float | None = None
    bound_slack: float | None = None
    t_relax_s: float | None = None
    t_sim_s: float | None = None
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _states_label(inst: ProblemInstance) -> str:
    sizes = set(inst.state_sizes)
    return str(sizes.pop()) if len(sizes) == 1 else "/".join(map(str, inst.state_sizes))


def _joint_states(inst: ProblemInstance) -> int:
    return math.prod(inst.state_sizes) * math.factorial(inst.n_sites)


def exact_admissible(inst: ProblemInstance, max_states: int) -> bool:
    return inst.n_sites <= 8 and _joint_states(inst) <= max_states


def _tasks(cfg: ExperimentConfig):
    for spec in cfg.suites:
        for a in cfg.alphas:
            yield ("suite", spec, a)
    for path in cfg.instance_paths:
        for a in cfg.alphas:
            yield ("file", str(path), a)


def _instance_for(task) -> ProblemInstance:
    kind, src, alpha = task
    if kind == "suite":
        return src.build(alpha)
    inst = load_instance(src)
    name = inst.name or Path(src).stem
    return ProblemInstance(inst.n_servers, inst.sites, inst.switch_cost, alpha,
                           inst.initial_placement, name=name)


def run_row(cfg: ExperimentConfig, task) -> ResultRow:
    kind, src, alpha = task
    label = src.problem if kind == "suite" else Path(src).stem
    row = ResultRow(label, 0, 0, "", alpha=alpha)
    try:
        inst = _instance_for(task)
        row.problem = inst.name or label
        row.N, row.M, row.states = inst.n_sites, inst.n_servers, _states_label(inst)
        ratio = realised_ratio(inst)
        row.c_over_r = None if math.isnan(ratio) else ratio

        t0 = time.perf_counter()
        rel = solve_relaxation(inst)
        row.t_relax_s = time.perf_counter() - t0
        row.Z_r = rel.objective

        if cfg.exact and exact_admissible(inst, cfg.max_exact_states):
            try:
                ex = solve_exact(inst)
            except GuardExceeded:
                ex = None
            if ex is not None:
                row.Z_star = ex.optimal_value
                row.bound_slack = adp_gap_bound(inst, rel, ex).slack

        sim = replace(cfg.sim, master_seed=cfg.master_seed)
        t0 = time.perf_counter()
        for kind_ in cfg.policies:
            rep = evaluate_policy(inst, make_policy(inst, kind_, rel), sim)
            if kind_ == "greedy":
                row.Z_g, row.Z_g_se = rep.mean, rep.std_error
            else:
                row.Z_osl, row.Z_osl_se = rep.mean, rep.std_error
        row.t_sim_s = time.perf_counter() - t0
    except Exception as exc:  # recorded in the row; the run continues
        row.error = f"{type(exc).__name__}: {exc}"
        log.error("row %s alpha=%s failed: %s", row.problem, alpha, row.error)
    if not cfg.timings:
        row.t_relax_s = row.t_sim_s = None
    return row


def _run_task(args):
    return run_row(*args)


def run_benchmark(cfg: ExperimentConfig) -> list:
    tasks = list(_tasks(cfg))
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_task, [(cfg, t) for t in tasks]))
    else:
        rows = [run_row(cfg, t) for t in tasks]
    if cfg.out:
        write_results(rows, cfg.out)
    return rows


# --- results file ------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, int) and not isinstance(v, bool):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.6g}"


def write_results(rows, path):
    """Write the results table to ``path`` (or to an open text stream)."""
    if hasattr(path, "write"):
        _write_rows(rows, path)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_rows(rows, fh)


def _write_rows(rows, fh):
    fh.write(CSV_HEADER + "\n")
    w = csv.writer(fh, lineterminator="\n")
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])


def read_results(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for rec in reader:
            d = dict(zip(COLUMNS, rec))
            kw = {"problem": d["problem"], "N": int(d["N"]) if d["N"] else 0,
                  "M": int(d["M"]) if d["M"] else 0, "states": d["states"]}
            for f in fields(ResultRow):
                if f.name not in kw and f.name in d:
                    kw[f.name] = float(d[f.name]) if d[f.name] else None
            rows.append(ResultRow(**kw))
    return rows


# --- command line ---------------------------------------------------------------

def _load_with_alpha(path, alpha):
    inst = load_instance(path)
    return inst if alpha is None else inst.with_discount(alpha)


def _relaxation_for(inst, path):
    if path:
        return RelaxationSolution.load(path, inst)
    return solve_relaxation(inst)


def cmd_gen(args) -> int:
    alpha = args.alpha[0] if args.alpha else 0.9
    if args.suite:
        inst = suite_by_name(args.suite).build(alpha)
    else:
        n, m, k = args.random
        inst = generate_random_instance(args.seed, n, m, k, cost_scale=args.cost_scale,
                                        discount=alpha)
    if args.out:
        save_instance(inst, args.out)
    else:
        from .instance import dumps_instance
        sys.stdout.write(dumps_instance(inst) + "\n")
    return 0


def cmd_solve_exact(args) -> int:
    inst = _load_with_alpha(args.instance, args.alpha[0] if args.alpha else None)
    if not exact_admissible(inst, args.max_exact_states):
        log.error("joint state space has %d states, above --max-exact-states %d",
                  _joint_states(inst), args.max_exact_states)
        return 2
    ex = solve_exact(inst)
    rel = solve_relaxation(inst)
    ix = JointIndexer(inst.state_sizes)
    print(f"Z* = {ex.optimal_value:.6g}   Z_r = {rel.objective:.6g}   ({ix.n_states} joint states)")
    if args.out:
        row = ResultRow(inst.name or Path(args.instance).stem, inst.n_sites, inst.n_servers,
                        _states_label(inst), realised_ratio(inst), inst.discount,
                        Z_star=ex.optimal_value, Z_r=rel.objective,
                        bound_slack=adp_gap_bound(inst, rel, ex).slack)
        write_results([row], args.out)
    return 0


def cmd_relax(args) -> int:
    inst = _load_with_alpha(args.instance, args.alpha[0] if args.alpha else None)
    t0 = time.perf_counter()
    rel = solve_relaxation(inst)
    dt = time.perf_counter() - t0
    print(f"Z_r = {rel.objective:.6g}   ({rel.layout.n_vars} variables, {dt:.2f} s)")
    if args.out:
        rel.save(args.out)
    return 0


def cmd_simulate(args) -> int:
    inst = _load_with_alpha(args.instance, args.alpha[0] if args.alpha else None)
    kinds = args.policy or ["one_step_lookahead"]
    rel = None
    if any(k in ("one_step_lookahead", "primal_dual") for k in kinds):
        rel = _relaxation_for(inst, args.relaxation)
    cfg = SimConfig(args.trajectories, args.tol, args.seed)
    out = {}
    for kind in kinds:
        trace = [] if args.trace else None
        pol = make_policy(inst, kind, rel, seed=args.seed if kind == "random" else None)
        rep = evaluate_policy(inst, pol, cfg, log=trace)
        print(f"{kind:>20s}: {rep.mean:.6g} +- {rep.std_error:.3g}  (T={rep.horizon})")
        out[kind] = {"mean": rep.mean, "std_error": rep.std_error, "horizon": rep.horizon,
                     "n_trajectories": rep.n_trajectories}
        if args.trace:
            write_trajectory_log(trace, f"{args.trace}.{kind}.csv")
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    suites = tuple(suite_by_name(s) for s in (args.suite or []))
    if not suites and not args.instance:
        suites = tuple(s for s in BENCHMARK_SUITES if s.n_sites <= 6)
    alphas = tuple(args.alpha) if args.alpha else None
    sim = SimConfig(args.trajectories, args.tol, args.seed)
    common = dict(policies=tuple(args.policy or ("greedy", "one_step_lookahead")), sim=sim,
                  exact=not args.no_exact, max_exact_states=args.max_exact_states,
                  master_seed=args.seed, workers=args.workers, timings=not args.no_timing)
    rows = []
    # suites carry their own discount lists unless --alpha is given
    for spec in suites:
        rows += run_benchmark(ExperimentConfig(suites=(spec,), alphas=alphas or spec.alphas,
                                               **common))
    if args.instance:
        if alphas is None:
            for p in args.instance:
                cfg = ExperimentConfig(instance_paths=(p,),
                                       alphas=(load_instance(p).discount,), **common)
                rows += run_benchmark(cfg)
        else:
            rows += run_benchmark(ExperimentConfig(instance_paths=tuple(args.instance),
                                                   alphas=alphas, **common))
    write_results(rows, args.out or sys.stdout)
    for r in rows:
        if r.failed:
            print(f"FAILED {r.problem} alpha={r.alpha}: {r.error}", file=sys.stderr)
    return 1 if any(r.failed for r in rows) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbpsc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def shared(sp, *, instance=True, multi=False):
        if instance:
            sp.add_argument("--instance", nargs="+" if multi else None,
                            required=not multi, help="instance JSON file")
        sp.add_argument("--alpha", type=float, nargs="+", help="discount factor(s)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")
        sp.add_argument("--max-exact-states", type=int, default=DEFAULT_MAX_EXACT_STATES)

    def sim_flags(sp):
        sp.add_argument("--policy", nargs="+", choices=KINDS)
        sp.add_argument("--trajectories", type=int, default=10_000)
        sp.add_argument("--tol", type=float, default=1e-6, help="truncation tolerance")

    g = sub.add_parser("gen", help="write an instance file")
    shared(g, instance=False)
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--suite", choices=[s.problem for s in BENCHMARK_SUITES])
    src.add_argument("--random", type=int, nargs=3, metavar=("N", "M", "K"))
    g.add_argument("--cost-scale", type=float, default=1.0)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("solve-exact", help="solve the full MDP linear program")
    shared(e)
    e.set_defaults(func=cmd_solve_exact)

    r = sub.add_parser("relax", help="solve the relaxation and store its duals")
    shared(r)
    r.set_defaults(func=cmd_relax)

    s = sub.add_parser("simulate", help="Monte-Carlo evaluation of policies")
    shared(s)
    sim_flags(s)
    s.add_argument("--relaxation", help="stored relaxation solution to reuse")
    s.add_argument("--trace", help="prefix for per-policy trajectory logs")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="run suites and write the results table")
    shared(b, multi=True)
    sim_flags(b)
    b.add_argument("--suite", nargs="+", choices=[s.problem for s in BENCHMARK_SUITES])
    b.add_argument("--no-exact", action="store_true")
    b.add_argument("--no-timing", action="store_true",
                   help="leave wall times blank so reruns are byte-identical")
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bench" and args.policy:
        bad = [k for k in args.policy if k not in ("greedy", "one_step_lookahead")]
        if bad:
            print(f"bench reports greedy and one_step_lookahead only, got {bad}", file=sys.stderr)
            return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
