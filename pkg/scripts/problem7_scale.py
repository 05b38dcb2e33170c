"""Time building and solving the relaxation at the larger suite shapes."""
import argparse
import time

from rbpsc.relaxation import build_relaxation, solve_relaxation
from rbpsc.suites import suite_by_name


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--suite", default="P7", choices=["P5", "P6", "P7", "P8"])
    p.add_argument("--alpha", type=float, nargs="+")
    args = p.parse_args(argv)
    spec = suite_by_name(args.suite)
    for alpha in args.alpha or spec.alphas:
        inst = spec.build(alpha)
        t0 = time.perf_counter()
        model = build_relaxation(inst)
        t1 = time.perf_counter()
        rel = solve_relaxation(inst, model)
        t2 = time.perf_counter()
        print(f"{spec.problem} alpha={alpha}: {model.matrix.shape[1]} vars x "
              f"{model.matrix.shape[0]} rows, build {t1 - t0:.1f} s, solve {t2 - t1:.1f} s, "
              f"Z_r={rel.objective:.6g}", flush=True)


if __name__ == "__main__":
    main()
