"""Long-horizon sensitivity of optimal CRRA portfolio utility to the
risk-tolerance exponent.

Closed-form spectral machinery (eigenpairs of the killed generator, the
factorization p_T = phi(xi) e^{-lambda T} f(T, xi), exact eigenvalue
sensitivities) for five market models, cross-validated by Monte Carlo
estimators built from pathwise first-variation and likelihood-ratio weights.
"""

from .eigen import (
    Eigenpair,
    HSDecomposition,
    SensitivityReport,
    asymptotic_utility_sensitivity,
    black_scholes_sensitivity,
    eigenpair,
    generator_residual,
    hs_assemble,
    lambda_sensitivity,
    nu_gradient,
    remainder_closed_form,
    remainder_limit,
    utility_from_pT,
)
from .estimate import (
    ConvergenceTable,
    EstimatorTriple,
    McEstimate,
    convergence_study,
    cross_validate_estimators,
    estimate_pT,
    estimate_remainder,
    fd_lnpT_sensitivity,
)
from .models import (
    Family,
    HatDynamics,
    MarketParams,
    ModelSpec,
    PricingDynamics,
    ValidationError,
    derive_pricing_dynamics,
    hat_dynamics,
    model_violations,
    validate_model,
)
from .simulate import (
    PathEnsemble,
    RngPolicy,
    SchemeKind,
    SimScheme,
    default_scheme,
    first_variation,
    likelihood_ratio_weight,
    malliavin_weight_estimate,
    martingale_check,
    sample_paths,
)

__version__ = "0.1.0"

__all__ = [
    "Family", "MarketParams", "ModelSpec", "PricingDynamics", "HatDynamics",
    "ValidationError", "model_violations", "validate_model",
    "derive_pricing_dynamics", "hat_dynamics",
    "Eigenpair", "HSDecomposition", "SensitivityReport",
    "eigenpair", "generator_residual", "nu_gradient", "lambda_sensitivity",
    "hs_assemble", "remainder_closed_form", "remainder_limit",
    "utility_from_pT", "asymptotic_utility_sensitivity",
    "black_scholes_sensitivity",
    "SchemeKind", "SimScheme", "RngPolicy", "PathEnsemble", "McEstimate",
    "default_scheme", "sample_paths", "first_variation",
    "likelihood_ratio_weight", "malliavin_weight_estimate", "martingale_check",
    "ConvergenceTable", "EstimatorTriple", "estimate_pT", "estimate_remainder",
    "fd_lnpT_sensitivity", "convergence_study", "cross_validate_estimators",
    "__version__",
]
