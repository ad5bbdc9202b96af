"""Principal eigenvalues of time-periodic parabolic operators.

Solves ``tau u_t - div(A grad u) - grad m . grad u + V u = lambda u`` with
periodic time dependence on a box, via the period map of the evolution.
"""

from .analysis import (
    ConeFunction,
    DerivativeReport,
    SubsolutionCheck,
    Verdict,
    check_theorems,
    derivative_report,
    dlambda_dtau_formula,
    evaluate_J,
    gauge_transform,
    lemma_identity_residual,
    subsolution_residual,
    subsolution_rho,
)
from .errors import (
    ConeError,
    ExpressionDomainError,
    ExpressionError,
    ExpressionSyntaxError,
    NonConvergence,
    PeriodicEigenError,
    PositivityLoss,
    ProblemError,
    SingularStep,
    SolverError,
)
from .expression import Expression, eval_expression, parse_expression
from .floquet import (
    EvolutionState,
    FloquetSolution,
    period_map_apply,
    principal_floquet,
    spacetime_oracle_eig,
    step_evolution,
)
from .presets import PRESETS, preset
from .problem import (
    CoefficientField,
    Grid,
    ProblemSpec,
    build_problem,
    classify,
    is_separable,
    load_problem,
    make_grid,
    sample_coefficients,
)
from .spatial import (
    EllipticEig,
    SparseOperator,
    assemble_spatial_operator,
    averaged_problem_eig,
    elliptic_principal_eig,
    frozen_time_average,
)
from .sweep import SweepReport, SweepRow, emit, run_sweep

__version__ = "0.1.0"
