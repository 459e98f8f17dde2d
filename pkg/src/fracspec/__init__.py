"""Full-spectrum eigenbases by spectrum slicing, and fractional PDE solves on them."""

from .counting import count_geq_exact, count_geq_kpm, count_in_interval
from .errors import (
    BasisMismatch, DimensionMismatch, EmptySpectrum, FracSpecError, MassNotSPD, MeshError,
    NeumannNonzeroMean, NonpositiveEigenvalue, RankDeficientCluster, SingularFactor,
    SliceIncomplete, ZeroPivot,
)
from .fem import (
    BasisSpec, assemble, build_mesh, error_norm, evaluate, load_vector, project, read_mesh,
)
from .fracpde import (
    FractionalParams, SpectralCoefficients, apply_fractional, expand, expand_function,
    reconstruct, solve_diffusion, solve_poisson,
)
from .linalg import (
    MatrixPencil, SparseSymMatrix, dense_generalized_eig, factorizations, ldlt_factor,
    solve_factored,
)
from .partition import (
    PartitionPlan, RefinementParams, estimate_spectral_radius, partition, partition_tree,
)
from .slicer import (
    EigenBasis, EvaluatorPool, SliceTask, SolverOptions, compute_eigenbasis, postprocess,
    solve_all, solve_slice,
)

__version__ = "0.1.0"
