"""Zeroth-order optimization toolkit.

Variance-aware random perturbation schemes (including directionally aligned
perturbations sampled by hyperplane projection), two-point gradient
estimators, zeroth-order SGD with theory-derived learning-rate guards, and
a reproducible benchmark harness.
"""

from .analysis import (
    MseSummary,
    TauMask,
    VarianceBounds,
    empirical_estimator_mse,
    min_variance_mse,
    mse,
    tau_mse,
    variance_bounds,
    variance_lower_bound,
    variance_upper_bound,
)
from .estimator import GradientEstimate, batched, dap_pipeline, two_point
from .objectives import (
    EvaluationError,
    InvalidMeshError,
    MeshProblem,
    Objective,
    QuadraticSpec,
    SolverError,
    affine,
    fd_gradient,
    mesh_objective,
    poisson_solve,
    product,
    project_to_feasible,
    quadratic,
    quadratic_from_matrix,
    squared_norm,
)
from .optimizer import (
    DivergenceError,
    SgdConfig,
    SgdTrace,
    StepSizeInputs,
    corollary_schedule,
    max_step_nonconvex,
    max_step_strongly_convex,
    zo_sgd,
)
from .perturb import (
    AnchorPolicy,
    DegeneratePlaneError,
    MomentProfile,
    PerturbationScheme,
    RngStream,
    SchemeKind,
    derive_seed,
    draw,
    empirical_moment_profile,
    moment_profile,
    project_onto_hyperplane,
    sample_coordinate,
    sample_dap,
    sample_gaussian,
    sample_rademacher,
    sample_uniform_sphere,
)

__version__ = "0.1.0"
