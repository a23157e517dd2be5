"""Rotational pressure-correction solvers for incompressible flow with open
and traction boundary conditions, on triangular Taylor-Hood elements."""

from .fem import (
    DiscreteField,
    OperatorSet,
    SpacePair,
    assemble_boundary_load,
    assemble_load,
    assemble_operators,
    build_spaces,
    form_matrix,
    korn_constant,
    l2_project,
    prolong_from_gauge,
    restrict_to_gauge,
)
from .mesh import BoundaryFacet, Mesh, build_rect_mesh, mesh_size, write_mesh_text
from .schemes import (
    History,
    SchemeDriver,
    SchemeParams,
    SchemeState,
    StepDiagnostics,
    bdf_apply,
    extrapolate_sharp,
    step_count,
)
from .sparse_linalg import (
    SolverConfig,
    SolverFailure,
    SparseMatrix,
    matvec,
    smallest_generalized_eigenvalue,
    solve_general,
    solve_spd,
)
from .verification import (
    ConvergenceRow,
    ConvergenceTable,
    ErrorObserver,
    ExactSolution,
    FieldErrorEvaluator,
    StabilityTrace,
    convergence_study,
    eoc,
    estimate_kappa,
    evaluate_exact,
    make_boundary_traction,
    stability_probe,
)

__version__ = "0.1.0"
