"""Run every bundled suite and write one results table.

Exact columns are filled only where the joint state space fits under
--max-exact-states; the N=20 and N=30 suites get fewer trajectories by default
because each simulated step there solves a 20x20 or 30x30 assignment.
"""
import argparse
import logging
import sys

from rbpsc.harness import DEFAULT_MAX_EXACT_STATES, ExperimentConfig, run_benchmark, write_results
from rbpsc.simulate import SimConfig
from rbpsc.suites import BENCHMARK_SUITES


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="benchmark.csv")
    p.add_argument("--trajectories", type=int, default=10_000)
    p.add_argument("--large-trajectories", type=int, default=500,
                   help="trajectories for suites with more than 6 sites")
    p.add_argument("--skip-large", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-exact-states", type=int, default=DEFAULT_MAX_EXACT_STATES)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    rows = []
    for spec in BENCHMARK_SUITES:
        large = spec.n_sites > 6
        if large and args.skip_large:
            continue
        n_traj = args.large_trajectories if large else args.trajectories
        cfg = ExperimentConfig(suites=(spec,), alphas=spec.alphas,
                               sim=SimConfig(n_trajectories=n_traj),
                               max_exact_states=args.max_exact_states, master_seed=args.seed)
        logging.info("suite %s (%d trajectories)", spec.problem, n_traj)
        rows += run_benchmark(cfg)
        write_results(rows, args.out)
    write_results(rows, sys.stdout)
    return 1 if any(r.failed for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
