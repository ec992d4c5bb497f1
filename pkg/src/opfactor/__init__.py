"""Sparse Cholesky factors of elliptic solution operators recovered from black-box solves."""

from .geometry import PointSet, PartitionTree, build_regular_partition, build_general_partition
from .basis import MultiresBasis, build_haar_basis
from .coloring import (Coloring, SupernodeSet, color_simplicial, aggregate_supernodes, color_supernodal,
                       singleton_supernodes)
from .measurement import ObservationSet, build_measurements, build_supernodal_measurements, observe
from .oracles import (ProblemSpec, SolverOracle, make_laplacian_potential, make_rough_conductivity,
                      make_fractional, load_matrix_oracle, dense_test_oracle, make_oracle)
from .recovery import (SparseFactor, NotPositiveDefiniteError, build_pattern, cholesky_recover,
                       supernodal_cholesky_recover, recover, scatter_simplicial, scatter_supernodal,
                       truncate_low_rank, save_factor, load_factor)
from .analysis import ExperimentConfig, estimate_rel_error, run_experiment, run_lowrank

__version__ = "0.1.0"
