"""Rho sweeps on the 64 x 64 benchmark problems; one CSV per problem in --outdir.

    python scripts/run_sweeps.py --outdir results
"""

import argparse
import time
from pathlib import Path

from opfactor.analysis import ExperimentConfig, run_experiment
from opfactor.oracles import ProblemSpec

PROBLEMS = {
    "smooth": ProblemSpec("laplace_potential", 64, 2),
    "rough": ProblemSpec("rough_conductivity", 64, 2),
    "frac05": ProblemSpec("fractional", 64, 2, s=0.5),
    "frac15": ProblemSpec("fractional", 64, 2, s=1.5),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--rho-list", default="4,5,6,7,8,9,10")
    ap.add_argument("--mode", default="simplicial", choices=["simplicial", "supernodal"])
    ap.add_argument("--only", nargs="*", choices=sorted(PROBLEMS))
    ap.add_argument("--eval-iters", type=int, default=100)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    rhos = tuple(float(r) for r in args.rho_list.split(","))
    for name in args.only or PROBLEMS:
        spec = PROBLEMS[name]
        spec = ProblemSpec(spec.kind, args.n, spec.dim, spec.s, spec.seed)
        t0 = time.perf_counter()
        cfg = ExperimentConfig(spec, rhos, args.mode, eval_iters=args.eval_iters, threads=args.threads,
                               out=str(out / f"{name}_{args.mode}.csv"))
        for rho, mv, err in run_experiment(cfg):
            print(f"{name:7s} rho={rho:5.1f} matvecs={mv:6d} rel_err={err:.3e}")
        print(f"{name}: {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
