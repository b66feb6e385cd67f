"""B-spline IGA discretization, geometric multigrid, and extrapolation-
accelerated Picard solvers for nonlinear elliptic problems."""

from .bspline import (
    KnotVector,
    eval_basis,
    gauss_rule,
    greville_abscissae,
    insert_knots,
    make_open_uniform_knots,
    refine_dyadic,
)
from .extrapolation import (
    AndersonState,
    ExtrapolationResult,
    IterateWindow,
    anderson_solve,
    anderson_step,
    fixed_point_solve,
    generalized_residual,
    mpe_extrapolate,
    restarted_solve,
    rre_extrapolate,
)
from .history import IterationHistory, IterationRecord
from .iga import (
    DirichletLayout,
    SplineField,
    SplineSpace,
    apply_dirichlet,
    assemble_bratu_rhs,
    assemble_mass,
    assemble_monge_ampere_rhs,
    assemble_stiffness,
    eval_field,
    l2_error,
    l2_projection,
    make_space,
)
from .linalg import QRFactors, lu_solve_dense, qr_factor, solve_normal_equations, solve_upper_triangular
from .multigrid import (
    CycleReport,
    GridHierarchy,
    SmootherConfig,
    build_hierarchy,
    smooth,
    solve_to_tolerance,
    v_cycle,
)
from .nonlinear import (
    BratuProblem,
    MongeAmpereProblem,
    OuterConfig,
    bratu_picard_map,
    monge_ampere_picard_map,
    run_outer,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
