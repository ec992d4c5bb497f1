"""Command-line entry point: ``opfactor {recover,sweep,query,lowrank,selftest}``."""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .analysis import (CSV_HEADER, ExperimentConfig, build_problem, dense_rel_error, estimate_rel_error,
                       format_csv, run_experiment, run_lowrank, run_pipeline)
from .oracles import OracleError, ProblemSpec
from .recovery import NotPositiveDefiniteError, load_factor, save_factor


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _rho(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"rho must be positive, got {text}")
    return v


def _rho_list(text: str) -> tuple[float, ...]:
    return tuple(_rho(t) for t in text.split(",") if t.strip())


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("OPFACTOR_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ValueError(f"OPFACTOR_THREADS must be an integer, got {env!r}")


def _problem_args(p):
    p.add_argument("--problem", default="laplace_potential",
                   choices=["laplace_potential", "rough_conductivity", "fractional", "matrix_file"])
    p.add_argument("--n", type=int, default=64, help="grid points per axis (power of two)")
    p.add_argument("--dim", type=int, default=2, choices=[1, 2, 3])
    p.add_argument("--s", type=float, default=1.0, help="fractional order")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scaled", action="store_true", help="multiply the grid Laplacian by n^2")
    p.add_argument("--matrix", help="Matrix Market file (implies --problem matrix_file)")
    p.add_argument("--coords", help="point coordinates for --matrix, one row per unknown")
    p.add_argument("--mode", default="simplicial", choices=["simplicial", "supernodal"])
    p.add_argument("--threads", type=int, default=None)


def _spec(args) -> ProblemSpec:
    kind = "matrix_file" if args.matrix else args.problem
    return ProblemSpec(kind, args.n, args.dim, args.s, args.seed, path=args.matrix, coords=args.coords,
                       scaled=args.scaled)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="opfactor", description="Sparse Cholesky factors of solution operators from solves.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("recover", help="recover a factor and write it to a file")
    _problem_args(p)
    p.add_argument("--rho", type=_rho, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-iters", type=int, default=0, help="power iterations for an error report (0: skip)")

    p = sub.add_parser("sweep", help="rho sweep, CSV rho,matvecs,rel_err")
    _problem_args(p)
    p.add_argument("--rho-list", type=_rho_list, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-iters", type=int, default=100)
    p.add_argument("--dense-error", action="store_true", help="exact error from a dense Theta (small N)")

    p = sub.add_parser("lowrank", help="error of leading-column truncations, CSV k,rel_err")
    _problem_args(p)
    p.add_argument("--rho", type=_rho, default=float("inf"))
    p.add_argument("--out", required=True)
    p.add_argument("--eval-iters", type=int, default=100)
    p.add_argument("--dense-error", action="store_true")

    p = sub.add_parser("query", help="entries, log-determinant or samples from a factor file")
    p.add_argument("factor")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--entry", nargs=2, type=int, metavar=("I", "J"))
    g.add_argument("--logdet", action="store_true")
    g.add_argument("--sample", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("selftest", help="run a small invariant suite")
    p.add_argument("--threads", type=int, default=None)
    return ap


def _cmd_recover(args) -> int:
    oracle, basis = build_problem(_spec(args))
    F, _ = run_pipeline(oracle, basis, args.rho, args.mode, _threads(args))
    save_factor(F, args.out)
    print(f"N={F.n} matvecs={F.matvecs} nnz={F.nnz}")
    if args.eval_iters:
        rel, _, _ = estimate_rel_error(oracle, basis, F, args.eval_iters, args.seed)
        print(f"rel_err={rel!r}")
    return 0


def _config(args, rhos) -> ExperimentConfig:
    return ExperimentConfig(_spec(args), rhos, args.mode, seed=args.seed, eval_iters=max(1, args.eval_iters),
                            estimator="dense" if args.dense_error else "power", threads=_threads(args),
                            out=args.out, coords=args.coords)


def _cmd_sweep(args) -> int:
    rows = run_experiment(_config(args, args.rho_list))
    sys.stdout.write(format_csv(CSV_HEADER, rows))
    return 0


def _cmd_lowrank(args) -> int:
    rows = run_lowrank(_config(args, (args.rho,)))
    sys.stdout.write(format_csv(("k", "rel_err"), rows))
    return 0


def _cmd_query(args) -> int:
    F = load_factor(args.factor)
    if args.entry:
        i, j = args.entry
        if not (0 <= i < F.n and 0 <= j < F.n):
            raise ValueError(f"index out of range [0, {F.n})")
        print(repr(F.entry(i, j)))
    elif args.logdet:
        print(repr(F.logdet()))
    else:
        x = F.sample(args.seed, None if args.count == 1 else args.count)
        np.savetxt(sys.stdout, x.reshape(F.n, -1), fmt="%.17g")
    return 0


def _cmd_selftest(args) -> int:
    from .basis import check_basis
    from .coloring import check_coloring
    from .analysis import make_coloring
    from .recovery import dense_theta

    threads = _threads(args)
    failures = 0

    def report(name, ok, detail=""):
        nonlocal failures
        failures += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}".rstrip())

    oracle, basis = build_problem(ProblemSpec("laplace_potential", 8, 2, seed=0))
    try:
        check_basis(basis)
        report("basis orthonormal and local", True)
    except AssertionError as exc:
        report("basis orthonormal and local", False, str(exc))
    theta = dense_theta(oracle, basis)
    for rho, mode in ((2.0, "simplicial"), (2.0, "supernodal"), (float("inf"), "simplicial")):
        col = make_coloring(basis, rho, mode)
        try:
            check_coloring(col, basis)
            report(f"coloring rho={rho} {mode}", True)
        except AssertionError as exc:
            report(f"coloring rho={rho} {mode}", False, str(exc))
    F, _ = run_pipeline(oracle, basis, float("inf"), "simplicial", threads)
    err = dense_rel_error(theta, F)
    report("exact recovery at rho=inf", err <= 1e-10, f"rel_err={err:.2e}")
    D = F.dense()
    report("entry query", abs(F.entry(3, 17) - D[3, 17]) <= 1e-12 * abs(D).max())
    ld = np.linalg.slogdet(theta)[1]
    report("log-determinant", abs(F.logdet() - ld) <= 1e-8 * abs(ld))
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp, "a.bin"), Path(tmp, "b.bin")
        save_factor(F, a)
        save_factor(load_factor(a), b)
        report("factor file round trip", a.read_bytes() == b.read_bytes())
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"recover": _cmd_recover, "sweep": _cmd_sweep, "lowrank": _cmd_lowrank,
               "query": _cmd_query, "selftest": _cmd_selftest}[args.cmd]
    try:
        return handler(args)
    except NotPositiveDefiniteError as exc:
        print(f"opfactor: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, OracleError) as exc:
        print(f"opfactor: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
