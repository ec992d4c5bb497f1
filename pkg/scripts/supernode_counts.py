"""Per-level supernodal color counts on 2-D grids for a range of rho."""

import argparse

from opfactor.coloring import aggregate_supernodes, color_supernodal
from opfactor.basis import build_haar_basis
from opfactor.geometry import build_regular_partition


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[64, 128])
    ap.add_argument("--rho-list", default="2,3,4,5,6")
    args = ap.parse_args()

    for n in args.n:
        basis = build_haar_basis(build_regular_partition((n, n)))
        for rho in (float(r) for r in args.rho_list.split(",")):
            col = color_supernodal(aggregate_supernodes(basis, rho), basis, rho)
            counts = col.counts_per_level()
            print(f"n={n} rho={rho:g} max={max(counts.values())} " +
                  " ".join(f"{k}:{v}" for k, v in sorted(counts.items())))


if __name__ == "__main__":
    main()
