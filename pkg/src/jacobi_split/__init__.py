"""Synchronous parallel Jacobi with three data-splitting strategies."""

from .fabric import RankEndpoint, spawn_world
from .partition import (
    BandRowPartition,
    DependencyLists,
    ElementConnectivity,
    Substructure,
    band_row_split,
    build_dependency_lists,
    import_node_partition,
    substructure_split,
)
from .problems import MeshSpec, gen_crafted, gen_laplace
from .report import SolveReport
from .solver import (
    GLOBAL_NORM,
    SIMULTANEOUS_LOCAL,
    check_convergence,
    run_bandrow,
    run_substructuring,
    solve_bundle,
    substructuring_spmv,
)
from .sparse import (
    CsrMatrix,
    JacobiConfig,
    SingularDiagonalError,
    extract_inverse_diagonal,
    is_diagonally_dominant,
    sequential_jacobi,
    spectral_radius_estimate,
    spmv,
    weighted_residual_norm,
)

__all__ = [
    "BandRowPartition",
    "CsrMatrix",
    "DependencyLists",
    "ElementConnectivity",
    "GLOBAL_NORM",
    "JacobiConfig",
    "MeshSpec",
    "RankEndpoint",
    "SIMULTANEOUS_LOCAL",
    "SingularDiagonalError",
    "SolveReport",
    "Substructure",
    "band_row_split",
    "build_dependency_lists",
    "check_convergence",
    "extract_inverse_diagonal",
    "gen_crafted",
    "gen_laplace",
    "import_node_partition",
    "is_diagonally_dominant",
    "run_bandrow",
    "run_substructuring",
    "sequential_jacobi",
    "solve_bundle",
    "spawn_world",
    "spectral_radius_estimate",
    "spmv",
    "substructure_split",
    "substructuring_spmv",
    "weighted_residual_norm",
]
