"""Heat equation solver on level-set domains, discretized on an unfitted
Cartesian simplicial background mesh.

The solution is represented as the product of the discrete level set with a
finite element unknown, so the homogeneous Dirichlet condition holds by
construction on the discrete boundary.  Stability near the boundary comes
from a facet jump penalty and a least-squares term on the cut cells.
"""

from .mesh import BoxDomain, Mesh, SubMesh, build_background_mesh, extract_submesh, cell_geometry
from .levelset import (
    LevelSetFunction,
    DiscreteLevelSet,
    CellClassification,
    interpolate_levelset,
    classify,
    NoActiveCellsError,
)
from .elements import LagrangeBasis, QuadratureRule, DofMap, make_basis, make_quadrature, push_forward, build_dofmap
from .assembly import SparseSystem, RhsBuilder, assemble_lhs, make_rhs_builder, build_rhs
from .solver import TimeGrid, Trajectory, interpolate_initial, advance, TimeStepResolutionWarning
from .cases import TestCase, circle_case, popcorn_case, load_case
from .analysis import (
    ErrorRecord,
    ConvergenceReport,
    ErrorIntegrator,
    error_l2h1,
    error_linfl2,
    self_convergence,
    fit_order,
    write_records_csv,
)
from .driver import RunResult, run_single, make_time_grid

__version__ = "0.1.0"
