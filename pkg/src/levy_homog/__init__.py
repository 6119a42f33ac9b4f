"""Order-one nonlocal Hamilton-Jacobi-Bellman equations on the torus and their periodic homogenization."""

from .grid import GridFunction, TorusGrid, lipschitz_seminorm, sample_at, sup_norm_diff, upwind_gradient
from .kernels import (
    AssumptionReport,
    LevyKernel,
    check_cone_ellipticity,
    check_holder_in_xi,
    check_levy_bound,
    check_modulus_integrability,
    drift_correction,
    evaluate,
)
from .nonlocal_ops import apply_levy, fractional_laplacian_half, pucci_minus, pucci_plus
from .bellman import (
    ProblemData,
    hamiltonian,
    lipschitz_scaling_probe,
    solve_parabolic,
    solve_stationary_discounted,
)
from .cell import build_cell_problem, c_rho_constant, corrector_lipschitz_report, solve_cell
from .effective import (
    EffectiveCache,
    check_convexity_in_u,
    check_global_comparison,
    check_holder_in_x,
    check_lipschitz_in_p,
    effective_growth_bound,
    eval_effective,
    solve_effective_parabolic,
)
from .homog import discrete_comparison_suite, run_convergence_study

__version__ = "0.1.0"

__all__ = [
    "GridFunction",
    "TorusGrid",
    "lipschitz_seminorm",
    "sample_at",
    "sup_norm_diff",
    "upwind_gradient",
    "AssumptionReport",
    "LevyKernel",
    "check_cone_ellipticity",
    "check_holder_in_xi",
    "check_levy_bound",
    "check_modulus_integrability",
    "drift_correction",
    "evaluate",
    "apply_levy",
    "fractional_laplacian_half",
    "pucci_minus",
    "pucci_plus",
    "ProblemData",
    "hamiltonian",
    "lipschitz_scaling_probe",
    "solve_parabolic",
    "solve_stationary_discounted",
    "build_cell_problem",
    "c_rho_constant",
    "corrector_lipschitz_report",
    "solve_cell",
    "EffectiveCache",
    "check_convexity_in_u",
    "check_global_comparison",
    "check_holder_in_x",
    "check_lipschitz_in_p",
    "effective_growth_bound",
    "eval_effective",
    "solve_effective_parabolic",
    "discrete_comparison_suite",
    "run_convergence_study",
]
