"""Empirical-likelihood test for a change in high-dimensional linear regression
coefficients at a known candidate index."""

from .elcore import (
    PROOF_CONSISTENT,
    THEOREM_TEXT,
    DeltaComponents,
    LagrangeSolution,
    MomentDiagnostics,
    MomentSummary,
    PreparedDesign,
    ScoreSet,
    delta_components,
    delta_n,
    el_statistic,
    lambda_approx,
    moment_diagnostics,
    moment_summary,
    psi_n,
    s_n_matrix,
    score_vectors,
    solve_lagrange,
    v_n_matrix,
    variance_terms,
)
from .errors import *  # noqa: F401,F403
from .inference import (
    AssumptionReport,
    ConfidenceQuery,
    TestConfig,
    TestResult,
    check_assumptions,
    confidence_region_membership,
    estimate_first_segment,
    test_changepoint,
    z_statistic,
)
from .model import (
    CoefficientPair,
    Design,
    ErrorSpec,
    error_moments,
    generate_design,
    generate_response,
    sequence_beta,
)
from .simlab import (
    ExperimentOutcome,
    ExperimentSpec,
    critical_from_samples,
    empirical_critical_value,
    run_coverage,
    run_power,
    simulate_z,
)

__version__ = "0.1.0"
