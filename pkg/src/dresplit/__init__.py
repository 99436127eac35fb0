"""Low-rank LDL^T splitting schemes for differential Riccati equations.

Solves P' = A^T P + P A + Q - P S P in factored form with Lie, Strang and
additive splitting schemes of arbitrary even/odd order, embedded error
estimation, and adaptive PI-controlled time stepping.
"""

from .adaptive import (
    ControllerParams,
    QuadraturePool,
    StepRecord,
    Trajectory,
    default_quad_degree,
    estimate_derivatives,
    integrate_adaptive,
    integrate_fixed,
    interpolation_error_bound,
    pi_update,
    reject_resize,
)
from .errors import (
    CoefficientConditioning,
    DresplitError,
    IngestError,
    InvalidInput,
    InvalidNodes,
    InvalidReference,
    NoEmbeddedMethod,
    OracleDiverged,
    RefusedDense,
    StepSizeCollapse,
    StepTooLarge,
    ToleranceNotMet,
)
from .expaction import ExpActionOptions, StiffOperator, exp_action
from .lowrank import (
    CompressionOptions,
    LDLTFactor,
    combine,
    compress,
    frob_norm,
    interpolate,
    to_dense,
)
from .oracle import (
    DenseProblem,
    dense_dre_reference,
    dense_subflow,
    relative_error,
    self_verified_reference,
)
from .problems import (
    export_problem,
    generate_problem,
    ingest_problem,
    to_dense_problem,
)
from .schemes import (
    SchemeCoefficients,
    SchemeSpec,
    additive_coeffs,
    additive_step,
    embedded_coeffs,
    lie_chain,
    multiplicative_step,
)
from .study import RunConfig, StudySpec, run_solve, run_study, run_validation
from .subflows import (
    ProblemData,
    QuadraticTerm,
    QuadratureState,
    affine_flow,
    init_quadrature,
    integral_factor,
    quad_weights,
    quadratic_flow,
    update_quadrature,
)

__version__ = "0.1.0"
