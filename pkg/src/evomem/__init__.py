"""Evolution equations with exponentially fading memory and set-valued forcing.

Solves v' + A v + B (Kv) in F(t, v) on a 1D Dirichlet grid, where K is the
exponential-kernel memory operator (reduced to a local ODE for the memory
state), A a monotone possibly nonlinear diffusion operator, B a symmetric
strongly positive coupling, and F a closed convex set field.  Alongside the
solvers the package machine-checks the analytic backbone: kernel norm bounds,
the discrete energy identity, and explicit Gronwall-type a priori bounds.
"""

from .spaces import (
    Grid,
    TimeMesh,
    Exponents,
    pairing,
    h_norm,
    va_norm,
    b_norm,
    dual_norm_estimate,
    embedding_constant,
    sine_profile,
)
from .kernel import (
    MemoryParams,
    kernel_eval,
    l1_kernel_norm,
    memory_step,
    apply_k_direct,
    check_relation5,
    verify_lemma_bounds,
)
from .operators import (
    PLaplacian,
    LinearOperatorA,
    CustomOperatorA,
    OperatorB,
    laplacian_matrix,
    laplacian_b,
    fractional_laplacian_b,
    identity_scaled_b,
    AssumptionReport,
    check_monotone,
    check_growth_a,
    check_coercive_a,
    check_b,
    hemicontinuity_probe,
)
from .setvalued import (
    BallValue,
    BoxValue,
    PolytopeValue,
    BallField,
    BoxField,
    PolytopeField,
    SingletonField,
    GrowthEnvelope,
    MinimalNorm,
    ProjectPrevious,
    Extremal,
    ConstantCenter,
    select,
    distance_to_set,
    truncate,
    radial_retraction,
    check_growth_f,
)
from .solver import (
    ProblemData,
    Trajectory,
    FixedPointResult,
    NonlinearSolveFailure,
    implicit_step_a,
    solve_single_valued,
    solve_no_memory,
    marching_solve,
    fixed_point_iterate,
    residual_certificate,
)
from .diagnostics import (
    EnergyLedger,
    energy_ledger,
    OperatorFit,
    fit_problem_constants,
    AprioriConstants,
    gronwall_constants,
    verify_apriori,
    convergence_study,
)

__version__ = "0.1.0"
