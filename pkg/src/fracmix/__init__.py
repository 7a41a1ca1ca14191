"""Mixed displacement-pressure-phase-field fracture solver.

Quadrilateral Taylor-Hood discretization with an extrapolated phase field, a
primal-dual active set treatment of crack irreversibility, and a flexible
GMRES solver preconditioned block-triangularly with a pressure Schur
complement, algebraic multigrid and inner conjugate gradients. Remains
well posed for Poisson ratios up to and including 0.5.
"""
from .amg import AmgHierarchy, AmgSettings, amg_setup, amg_vcycle
from .assembly import Assembler, BlockMatrix, BlockVector
from .fem import ConstraintSet, DofMap, gauss_quadrature, hanging_constraints, interpolate, shape_eval
from .krylov import (
    BlockPreconditioner,
    IndefiniteOperatorError,
    KrylovSettings,
    LinearSolveInfo,
    LinearSolver,
    NonconvergenceError,
    cg,
    elasticity_nullspace,
    fgmres,
    restrict_constraints,
    schur_apply,
)
from .mesh import Box, Mesh, build_rectangle, refine_cells, refine_region, refine_uniform
from .model import (
    MaterialParams,
    State,
    degradation,
    extrapolate_phase,
    lame_from_E_nu,
    lame_from_mu_nu,
    strain,
    stress_mixed,
    stress_primal,
)
from .newton import NewtonSettings, SolveStats, solve_timestep, update_active_set
from .output import write_outputs, write_vtk
from .qoi import (
    bulk_energy,
    cod_max,
    cod_profile,
    cod_ref,
    compute_cod,
    compute_tcv,
    crack_energy,
    point_displacement,
    tcv_ref,
)
from .scenarios import SCENARIOS, Problem, QoiReport, ScenarioConfig, build_problem, run_scenario

__version__ = "0.1.0"
