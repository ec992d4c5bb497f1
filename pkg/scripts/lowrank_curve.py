"""Error of level-prefix truncations of the exact factor against the optimal rank-k error."""

import argparse

import numpy as np

from opfactor.analysis import build_problem, dense_rel_error, level_cuts, run_pipeline
from opfactor.oracles import ProblemSpec
from opfactor.recovery import dense_theta


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--unscaled", action="store_true", help="use the unitless stencil")
    args = ap.parse_args()

    oracle, basis = build_problem(ProblemSpec("laplace_potential", args.n, 2, seed=args.seed,
                                              scaled=not args.unscaled))
    theta = dense_theta(oracle, basis)
    sig = np.linalg.eigvalsh(theta)[::-1]
    F, pattern = run_pipeline(oracle, basis, np.inf)
    print("k,err,sigma_k+1,ratio")
    for k in level_cuts(F, pattern, basis):
        err = dense_rel_error(theta, F.truncate(k)) * sig[0]
        print(f"{k},{err:.6e},{sig[k]:.6e},{err / sig[k]:.3f}")


if __name__ == "__main__":
    main()
