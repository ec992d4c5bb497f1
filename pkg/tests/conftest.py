import functools

import numpy as np
import pytest

from opfactor.basis import build_haar_basis
from opfactor.geometry import build_regular_partition
from opfactor.oracles import make_laplacian_potential
from opfactor.recovery import dense_theta


@functools.lru_cache(maxsize=None)
def grid_basis(n, dim=2):
    return build_haar_basis(build_regular_partition((n,) * dim))


@functools.lru_cache(maxsize=None)
def grid_problem(n, seed=0, scaled=False):
    """(oracle, basis, dense Theta) for the random-potential problem on an n x n grid."""
    basis = grid_basis(n)
    oracle = make_laplacian_potential(n, 2, seed, scaled=scaled)
    return oracle, basis, dense_theta(oracle, basis)


def spectral_rel_error(theta, approx):
    return np.abs(np.linalg.eigvalsh(theta - approx)).max() / np.abs(np.linalg.eigvalsh(theta)).max()


@pytest.fixture
def problem16():
    return grid_problem(16)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def record(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}".rstrip(": ")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
