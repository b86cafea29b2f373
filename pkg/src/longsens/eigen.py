"""Closed-form eigenpairs, the spectral factorization of p_T, eigenvalue
sensitivities in the risk-tolerance exponent, remainder-function limits, and
the long-horizon utility-sensitivity asymptotics.

For each state model the generator with killing admits an explicit positive
eigenfunction phi and eigenvalue lambda, giving

    p_T = phi(xi) * exp(-lambda T) * f(T, xi),

where the remainder f(T, xi) is an eigen-measure expectation of 1/phi(X_T)
that converges to an invariant-distribution integral.  All assembly happens
in log space so large horizons never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import specialfn
from .models import (
    Family,
    HatDynamics,
    MarketParams,
    ModelSpec,
    PricingDynamics,
    derive_pricing_dynamics,
    hat_dynamics,
    killing_coefficient,
    tilted_speed,
)

__all__ = [
    "Eigenpair",
    "NuGradient",
    "HSDecomposition",
    "SensitivityReport",
    "eigenpair",
    "generator_residual",
    "nu_gradient",
    "lambda_sensitivity",
    "hs_assemble",
    "remainder_closed_form",
    "remainder_limit",
    "utility_from_pT",
    "asymptotic_utility_sensitivity",
    "black_scholes_sensitivity",
    "invariant_moments",
    "invariant_grid",
]


@dataclass(frozen=True)
class Eigenpair:
    """Eigenvalue lambda and positive eigenfunction phi of the killed
    generator, with the shape parameters (eta, ell) of phi and the
    eigen-measure drift parameters (alpha and, for OU, delta)."""

    family: Family
    lam: float
    eta: float
    ell: float
    alpha: float
    delta: float | None = None

    def log_phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.family is Family.OU:
            return -0.5 * self.eta * np.square(x) - self.ell * x
        if self.family is Family.THREE_HALVES:
            return -self.eta * np.log(x)
        if self.family is Family.BLACK_SCHOLES:
            return np.zeros_like(x)
        return -self.eta * x

    def phi(self, x):
        return np.exp(self.log_phi(x))

    def phi_ratios(self, x):
        """(phi'/phi, phi''/phi) evaluated analytically."""
        x = np.asarray(x, dtype=float)
        if self.family is Family.OU:
            g = -(self.eta * x + self.ell)
            return g, np.square(g) - self.eta
        if self.family is Family.THREE_HALVES:
            return -self.eta / x, self.eta * (self.eta + 1.0) / np.square(x)
        if self.family is Family.BLACK_SCHOLES:
            return np.zeros_like(x), np.zeros_like(x)
        return np.full_like(x, -self.eta), np.full_like(x, self.eta**2)


def eigenpair(spec: ModelSpec, dyn: PricingDynamics) -> Eigenpair:
    """Closed-form eigenpair of the killed generator for each family.

    The discriminant is positive whenever the killing coefficient respects
    its family-specific lower bound; a breach is reported as a domain error
    naming that bound.
    """
    fam, a, q, b, sig = spec.family, dyn.a, dyn.q, dyn.b, dyn.sigma
    if fam is Family.BLACK_SCHOLES:
        return Eigenpair(fam, lam=q * dyn.theta_sq, eta=0.0, ell=0.0, alpha=0.0)
    if fam is Family.THREE_HALVES:
        disc = (a + sig**2 / 2) ** 2 + 2.0 * q * sig**2
        if disc < 0:
            raise ValueError(
                "q > -(a+sigma^2/2)^2/(2 sigma^2) + sigma^2/8 required for the 3/2 eigenpair"
            )
        D = math.sqrt(disc)
        eta = (D - (a + sig**2 / 2)) / sig**2
        return Eigenpair(fam, lam=b * eta, eta=eta, ell=0.0, alpha=a + sig**2 * eta)
    disc = a * a + 2.0 * q * sig**2
    if disc < 0:
        raise ValueError("q > -a^2/(2 sigma^2) required for the eigenpair")
    alpha = math.sqrt(disc)
    eta = (alpha - a) / sig**2
    if fam is Family.OU:
        ell = b * eta / alpha
        lam = -0.5 * sig**2 * ell**2 + b * ell + 0.5 * (alpha - a)
        # Girsanov drift level under the eigen-measure: b - sigma^2 ell = a b / alpha
        return Eigenpair(fam, lam=lam, eta=eta, ell=ell, alpha=alpha, delta=a * b / alpha)
    return Eigenpair(fam, lam=b * eta, eta=eta, ell=0.0, alpha=alpha)


def generator_residual(spec: ModelSpec, dyn: PricingDynamics, eig: Eigenpair,
                       grid) -> float:
    """Max over the grid of |L phi + lambda phi| / (|lambda| phi + eps)
    with analytic phi derivatives; eps floors the lambda=0 degenerate case."""
    eps = 1e-300
    x = np.asarray(grid, dtype=float)
    p1, p2 = eig.phi_ratios(x)
    phi = eig.phi(x)
    resid = (0.5 * np.square(dyn.vol(x)) * p2 + dyn.drift(x) * p1
             - dyn.killing(x) + eig.lam) * phi
    return float(np.max(np.abs(resid) / (abs(eig.lam) * phi + eps)))


@dataclass(frozen=True)
class NuGradient:
    """Derivatives in nu of the derived parameters, by exact chain rule
    through a(nu) and q(nu)."""

    d_a: float
    d_q: float
    d_alpha: float
    d_eta: float
    d_ell: float
    d_delta: float
    d_lambda: float


def nu_gradient(spec: ModelSpec, mkt: MarketParams) -> NuGradient:
    """Chain-rule derivatives of (alpha, eta, ell, delta, lambda) in nu.

    da/dnu = -sigma rho_bar / (1-nu)^2 and
    dq/dnu = -(1 - nu + 2 rho'rho nu) / (2 (1-nu)^3); everything else follows
    by differentiating the closed-form eigenpair.
    """
    nu, R, sig, b = mkt.nu, mkt.rho_sq, spec.sigma, spec.b
    dyn = derive_pricing_dynamics(spec, mkt)
    a, q = dyn.a, dyn.q
    d_a = -sig * mkt.rho_bar / (1.0 - nu) ** 2
    d_q = -(1.0 - nu + 2.0 * R * nu) / (2.0 * (1.0 - nu) ** 3)
    fam = spec.family
    if fam is Family.BLACK_SCHOLES:
        d_lam = d_q * dyn.theta_sq
        return NuGradient(0.0, d_q, 0.0, 0.0, 0.0, 0.0, d_lam)
    if fam is Family.THREE_HALVES:
        D = math.sqrt((a + sig**2 / 2) ** 2 + 2.0 * q * sig**2)
        d_D = ((a + sig**2 / 2) * d_a + sig**2 * d_q) / D
        d_eta = (d_D - d_a) / sig**2
        eta = (D - (a + sig**2 / 2)) / sig**2
        return NuGradient(d_a, d_q, d_alpha=d_D, d_eta=d_eta, d_ell=0.0,
                          d_delta=0.0, d_lambda=b * d_eta)
    alpha = math.sqrt(a * a + 2.0 * q * sig**2)
    d_alpha = (a * d_a + sig**2 * d_q) / alpha
    d_eta = (d_alpha - d_a) / sig**2
    if fam is Family.OU:
        eta = (alpha - a) / sig**2
        ell = b * eta / alpha
        d_ell = (-2.0 * q * b / alpha**3) * d_a + (a * b / alpha**3) * d_q
        d_delta = (b / alpha) * (d_a - a * d_alpha / alpha)
        d_lam = (b - sig**2 * ell) * d_ell + 0.5 * (d_alpha - d_a)
        return NuGradient(d_a, d_q, d_alpha, d_eta, d_ell, d_delta, d_lam)
    return NuGradient(d_a, d_q, d_alpha, d_eta, d_ell=0.0, d_delta=0.0,
                      d_lambda=b * d_eta)


def lambda_sensitivity(spec: ModelSpec, mkt: MarketParams) -> float:
    """d lambda / d nu in closed form (exact chain rule through a and q)."""
    return nu_gradient(spec, mkt).d_lambda


@dataclass(frozen=True)
class HSDecomposition:
    """The factorization p_T = phi(xi) e^{-lambda T} f(T, xi), assembled in
    log space and stored piece by piece."""

    phi_at_xi: float
    lam: float
    remainder: float
    T: float
    p_T: float
    log_p_T: float


def hs_assemble(eig: Eigenpair, xi: float, T: float, remainder: float) -> HSDecomposition:
    if not remainder > 0:
        raise ValueError(f"remainder must be positive, got {remainder!r}")
    log_phi = float(eig.log_phi(xi))
    log_p = log_phi - eig.lam * T + math.log(remainder)
    return HSDecomposition(phi_at_xi=math.exp(log_phi), lam=eig.lam,
                           remainder=remainder, T=T, p_T=math.exp(log_p),
                           log_p_T=log_p)


def remainder_closed_form(eig: Eigenpair, hat: HatDynamics, xi: float, T: float) -> float:
    """f(T, xi) = E^{hat}[1/phi(X_T)] in closed form.

    OU integrates the quadratic-exponential payoff against the Gaussian
    time-T law; CIR and 3/2 call the square-root-diffusion exponential
    moment and the 3/2 power moment.  The quadratic-drift family has no
    finite-T closed form; Monte Carlo (estimate module) covers it.
    """
    fam = eig.family
    if fam is Family.OU:
        alpha, sig = hat.alpha, hat.sigma
        if not eig.eta < 2.0 * alpha / sig**2:
            raise ValueError("eta < 2 alpha / sigma^2 violated for the OU remainder")
        e = math.exp(-alpha * T)
        m_T = xi * e + (hat.delta / alpha) * (1.0 - e)
        s2_T = sig**2 / (2.0 * alpha) * (1.0 - math.exp(-2.0 * alpha * T))
        return specialfn.gaussian_quad_exp_moment(eig.eta, eig.ell, m_T, s2_T)
    if fam is Family.CIR:
        return specialfn.cir_mgf(eig.eta, T, hat.b, hat.alpha, hat.sigma, xi)
    if fam is Family.THREE_HALVES:
        return specialfn.three_half_moment(eig.eta, T, hat.b, hat.alpha, hat.sigma, xi)
    if fam is Family.QUADRATIC_DRIFT:
        raise ValueError(
            "quadratic drift has no finite-T closed-form remainder; "
            "use Monte Carlo (estimate.estimate_remainder) or remainder_limit"
        )
    return 1.0  # Black-Scholes: phi = 1


def remainder_limit(eig: Eigenpair, hat: HatDynamics) -> float:
    """lim_{T -> inf} f(T, xi): the invariant-distribution integral of 1/phi."""
    fam = eig.family
    if fam is Family.OU:
        alpha, sig = hat.alpha, hat.sigma
        if not eig.eta < 2.0 * alpha / sig**2:
            raise ValueError("eta < 2 alpha / sigma^2 violated: divergent limit integral")
        return specialfn.gaussian_quad_exp_moment(
            eig.eta, eig.ell, hat.delta / alpha, sig**2 / (2.0 * alpha))
    if fam is Family.CIR:
        frac = eig.eta * hat.sigma**2 / (2.0 * hat.alpha)
        if not frac < 1:
            raise ValueError("eta < 2 alpha / sigma^2 violated: divergent limit integral")
        return (1.0 - frac) ** (-2.0 * hat.b / hat.sigma**2)
    if fam is Family.THREE_HALVES:
        n = 2.0 * hat.alpha / hat.sigma**2 + 2.0
        if not eig.eta < n:
            raise ValueError("eta < 2 alpha / sigma^2 + 2 violated: divergent limit integral")
        lg = specialfn.log_gamma(n - eig.eta) - specialfn.log_gamma(n)
        return math.exp(lg + eig.eta * math.log(2.0 * hat.b / hat.sigma**2))
    if fam is Family.QUADRATIC_DRIFT:
        return quad_invariant_exp_moment(eig.eta, hat.b, hat.alpha, hat.sigma)
    return 1.0


def quad_invariant_exp_moment(eta: float, b: float, alpha: float, sigma: float,
                              n_nodes: int = 400) -> float:
    """int e^{eta x} d pi / int d pi for the quadratic-drift invariant density
    pi(x) proportional to x^{-2} exp(-2b/(sigma^2 x) - 2 alpha x / sigma^2).

    Gauss-Legendre on u = ln x; the substitution removes both the essential
    singularity at 0 and the exponential tail.  Requires eta < 2 alpha/sigma^2.
    """
    s2 = sigma**2
    if not eta < 2.0 * alpha / s2:
        raise ValueError("eta < 2 alpha / sigma^2 violated: divergent integral")

    def log_integrand(u, tilt):
        # x = e^u; pi-weight * x du, with optional e^{tilt x} payoff folded in
        return (-(2.0 * b / s2) * np.exp(-u)
                - (2.0 * alpha / s2 - tilt) * np.exp(np.minimum(u, 700.0)) - u)

    # Locate the support: expand around the mode until the integrand is dead.
    coarse = np.linspace(-60.0, 60.0, 4001)
    lw = log_integrand(coarse, eta)
    peak = float(np.max(lw))
    alive = coarse[lw > peak - 800.0]
    u_lo, u_hi = float(alive[0]) - 0.1, float(alive[-1]) + 0.1

    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * (u_hi - u_lo) * nodes + 0.5 * (u_hi + u_lo)
    num = float(np.dot(weights, np.exp(log_integrand(u, eta) - peak)))
    den = float(np.dot(weights, np.exp(log_integrand(u, 0.0) - peak)))
    return num / den


def invariant_moments(eig: Eigenpair, hat: HatDynamics) -> tuple[float, float]:
    """(mean, sd) of the state under the eigen-measure invariant law."""
    fam = eig.family
    if fam is Family.OU:
        return hat.delta / hat.alpha, math.sqrt(hat.sigma**2 / (2.0 * hat.alpha))
    if fam is Family.CIR:
        mean = hat.b / hat.alpha
        var = hat.b * hat.sigma**2 / (2.0 * hat.alpha**2)
        return mean, math.sqrt(var)
    if fam is Family.THREE_HALVES:
        n = 2.0 * hat.alpha / hat.sigma**2 + 2.0
        scale = 2.0 * hat.b / hat.sigma**2
        m1 = math.exp(specialfn.log_gamma(n - 1) - specialfn.log_gamma(n)) * scale
        m2 = math.exp(specialfn.log_gamma(n - 2) - specialfn.log_gamma(n)) * scale**2
        return m1, math.sqrt(max(m2 - m1 * m1, 0.0))
    if fam is Family.QUADRATIC_DRIFT:
        m1 = _quad_power_moment(1, hat)
        m2 = _quad_power_moment(2, hat)
        return m1, math.sqrt(max(m2 - m1 * m1, 0.0))
    raise ValueError(f"no invariant law for family {fam}")


def _quad_power_moment(p: int, hat: HatDynamics, n_nodes: int = 400) -> float:
    s2 = hat.sigma**2
    b, alpha = hat.b, hat.alpha

    def log_integrand(u, power):
        return (-(2.0 * b / s2) * np.exp(-u)
                - (2.0 * alpha / s2) * np.exp(np.minimum(u, 700.0))
                - u + power * u)

    coarse = np.linspace(-60.0, 60.0, 4001)
    lw = log_integrand(coarse, 0)
    peak = float(np.max(lw))
    alive = coarse[lw > peak - 800.0]
    u_lo, u_hi = float(alive[0]) - 0.1, float(alive[-1]) + 0.1
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * (u_hi - u_lo) * nodes + 0.5 * (u_hi + u_lo)
    num = float(np.dot(weights, np.exp(log_integrand(u, p) - peak)))
    den = float(np.dot(weights, np.exp(log_integrand(u, 0) - peak)))
    return num / den


def invariant_grid(eig: Eigenpair, hat: HatDynamics, n: int = 50) -> np.ndarray:
    """State grid spanning three invariant-distribution standard deviations,
    clipped to the positive half-line for the positive-state families."""
    mean, sd = invariant_moments(eig, hat)
    lo, hi = mean - 3.0 * sd, mean + 3.0 * sd
    if eig.family is not Family.OU:
        lo = max(lo, 1e-3 * mean)
    return np.linspace(lo, hi, n)


@dataclass
class SensitivityRow:
    T: float
    value: float          # (1/T) d/dnu ln p_T
    target: float         # -d lambda/d nu
    residual: float
    std_error: float


@dataclass
class SensitivityReport:
    """Closed-form sensitivities plus the per-horizon table that the
    Monte Carlo study fills in."""

    dlambda_dnu: float
    asymptotic_slope: float
    rows: list[SensitivityRow] = field(default_factory=list)


def utility_from_pT(p_T: float, mkt: MarketParams, T: float) -> tuple[float, float]:
    """(u_T, ln u_T) from p_T; ln u_T computed in log space.

    u_T = -(omega^nu / nu) e^{r nu T} p_T^{(1-nu)/(1-nu+nu rho'rho)}.
    """
    if not p_T > 0:
        raise ValueError("p_T must be positive")
    nu, R = mkt.nu, mkt.rho_sq
    denom = 1.0 - nu + nu * R
    if denom == 0:
        raise ZeroDivisionError("singular exponent: 1 - nu + nu rho'rho = 0")
    expo = (1.0 - nu) / denom
    log_u = nu * math.log(mkt.omega) - math.log(-nu) + mkt.r * nu * T + expo * math.log(p_T)
    return math.exp(log_u), log_u


def asymptotic_utility_sensitivity(spec: ModelSpec, mkt: MarketParams) -> SensitivityReport:
    """Limiting slope of (1/T) d/dnu ln u_T:

        r + rho'rho lambda / (1 - nu + rho'rho nu)^2
          - (1-nu)/(1 - nu + nu rho'rho) * d lambda/d nu.
    """
    nu, R = mkt.nu, mkt.rho_sq
    denom = 1.0 - nu + nu * R
    if denom == 0:
        raise ZeroDivisionError("singular exponent: 1 - nu + nu rho'rho = 0")
    dyn = derive_pricing_dynamics(spec, mkt)
    lam = eigenpair(spec, dyn).lam
    dlam = lambda_sensitivity(spec, mkt)
    slope = mkt.r + R * lam / denom**2 - (1.0 - nu) / denom * dlam
    return SensitivityReport(dlambda_dnu=dlam, asymptotic_slope=slope)


def black_scholes_sensitivity(mu: float, mkt: MarketParams, sigma: float,
                              T: float) -> tuple[float, float, float]:
    """(ln u_T, d/dnu ln u_T, long-run slope) for the Black-Scholes model.

    -u_T = (omega^nu / nu) exp((r + (mu-r)^2 / (2 (1-nu) sigma^2)) nu T), so
    the derivative grows linearly in T with slope
    r + (mu-r)^2 / (2 (1-nu)^2 sigma^2).
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    nu, r = mkt.nu, mkt.r
    excess = (mu - r) ** 2 / (2.0 * sigma**2)
    log_u = nu * math.log(mkt.omega) - math.log(-nu) + (r + excess / (1.0 - nu)) * nu * T
    slope = r + excess / (1.0 - nu) ** 2
    dnu_log_u = math.log(mkt.omega) - 1.0 / nu + slope * T
    return log_u, dnu_log_u, slope
