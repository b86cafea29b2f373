"""Model families, parameter validation, and measure-change dynamics.

Five market models are supported: Black-Scholes (no state process) and four
scalar diffusions for the market price of risk (OU, CIR, 3/2, quadratic
drift).  Physical-measure parameters (b, k, sigma) plus investor preferences
(nu, rho_bar, rho'rho) determine the pricing-measure dynamics of the state

    dX_t = drift(X_t) dt + vol(X_t) dB_t

together with a killing rate q * (x or x^2), and -- once an eigenpair is
known -- the eigen-measure dynamics, under which only the drift changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Family",
    "MarketParams",
    "ModelSpec",
    "PricingDynamics",
    "HatDynamics",
    "ValidationError",
    "model_violations",
    "validate_model",
    "derive_pricing_dynamics",
    "hat_dynamics",
]


class Family(str, Enum):
    BLACK_SCHOLES = "black_scholes"
    OU = "ou"
    CIR = "cir"
    THREE_HALVES = "three_halves"
    QUADRATIC_DRIFT = "quadratic_drift"

    @classmethod
    def parse(cls, name: str) -> "Family":
        key = str(name).strip().lower().replace("-", "_").replace("/", "_")
        aliases = {
            "bs": cls.BLACK_SCHOLES,
            "blackscholes": cls.BLACK_SCHOLES,
            "3_2": cls.THREE_HALVES,
            "32": cls.THREE_HALVES,
            "threehalves": cls.THREE_HALVES,
            "quadratic": cls.QUADRATIC_DRIFT,
            "quadraticdrift": cls.QUADRATIC_DRIFT,
        }
        compact = key.replace("_", "")
        for fam in cls:
            if key == fam.value or compact == fam.value.replace("_", ""):
                return fam
        if key in aliases:
            return aliases[key]
        if compact in aliases:
            return aliases[compact]
        raise ValueError(f"unknown model family {name!r}")


# State models whose state space is (0, inf).
POSITIVE_STATE = (Family.CIR, Family.THREE_HALVES, Family.QUADRATIC_DRIFT)
# Killing-rate shape per family: q*x^2 for OU/quadratic, q*x for CIR/3-2.
QUADRATIC_KILLING = (Family.OU, Family.QUADRATIC_DRIFT)


@dataclass(frozen=True)
class MarketParams:
    """Investor and market scalars.

    r: constant short rate; omega: initial wealth (> 0); xi: initial state;
    nu: risk-tolerance exponent of the power utility (< 0); rho_bar: scalar
    correlation between the state noise and the asset noise; rho_sq: rho'rho
    in [0, 1], with rho_bar^2 <= rho_sq.
    """

    r: float
    omega: float
    xi: float
    nu: float
    rho_bar: float
    rho_sq: float


@dataclass(frozen=True)
class ModelSpec:
    """Physical-measure model: family tag plus (b, k, sigma) and, for
    Black-Scholes only, the stock drift mu."""

    family: Family
    b: float
    k: float
    sigma: float
    mu: float | None = None


class ValidationError(ValueError):
    """Raised when a (ModelSpec, MarketParams) pair violates its domain."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def _finite(*vals) -> bool:
    return all(v is not None and math.isfinite(v) for v in vals)


def model_violations(spec: ModelSpec, mkt: MarketParams) -> list[str]:
    """List every violated domain constraint; empty list means valid.

    NaN/Inf inputs are reported as violations, never raised.
    """
    errs: list[str] = []
    named = {
        "b": spec.b, "k": spec.k, "sigma": spec.sigma,
        "r": mkt.r, "omega": mkt.omega, "xi": mkt.xi, "nu": mkt.nu,
        "rho_bar": mkt.rho_bar, "rho_sq": mkt.rho_sq,
    }
    if spec.family is Family.BLACK_SCHOLES:
        named["mu"] = spec.mu if spec.mu is not None else math.nan
    for name, val in named.items():
        if val is None or not math.isfinite(val):
            errs.append(f"{name} must be finite, got {val!r}")
    if errs:
        return errs

    if not mkt.nu < 0:
        errs.append(f"nu < 0 violated (nu={mkt.nu!r})")
    if not mkt.omega > 0:
        errs.append(f"omega > 0 violated (omega={mkt.omega!r})")
    if not 0.0 <= mkt.rho_sq <= 1.0:
        errs.append(f"rho_sq in [0,1] violated (rho_sq={mkt.rho_sq!r})")
    if not mkt.rho_bar**2 <= mkt.rho_sq + 1e-15:
        errs.append(
            f"rho_bar^2 <= rho_sq violated (rho_bar^2={mkt.rho_bar**2!r}, rho_sq={mkt.rho_sq!r})"
        )

    fam = spec.family
    if fam is Family.BLACK_SCHOLES:
        if not spec.sigma > 0:
            errs.append(f"sigma > 0 violated (sigma={spec.sigma!r})")
    elif fam is Family.OU:
        if not spec.k > 0:
            errs.append(f"k > 0 violated (k={spec.k!r})")
        if not spec.sigma > 0:
            errs.append(f"sigma > 0 violated (sigma={spec.sigma!r})")
    elif fam is Family.CIR:
        if not spec.k > 0:
            errs.append(f"k > 0 violated (k={spec.k!r})")
        if not spec.sigma > 0:
            errs.append(f"sigma > 0 violated (sigma={spec.sigma!r})")
        if not mkt.xi > 0:
            errs.append(f"xi > 0 violated (xi={mkt.xi!r})")
        if not spec.b > spec.sigma**2 / 2:
            errs.append(
                f"b > sigma^2/2 violated (b={spec.b!r}, sigma^2/2={spec.sigma**2 / 2!r})"
            )
    elif fam is Family.THREE_HALVES:
        for name in ("b", "k", "sigma"):
            if not getattr(spec, name) > 0:
                errs.append(f"{name} > 0 violated ({name}={getattr(spec, name)!r})")
        if not mkt.xi > 0:
            errs.append(f"xi > 0 violated (xi={mkt.xi!r})")
    elif fam is Family.QUADRATIC_DRIFT:
        for name in ("b", "k"):
            if not getattr(spec, name) > 0:
                errs.append(f"{name} > 0 violated ({name}={getattr(spec, name)!r})")
        if spec.sigma == 0:
            errs.append("sigma != 0 violated (sigma=0)")
        if not mkt.xi > 0:
            errs.append(f"xi > 0 violated (xi={mkt.xi!r})")
    return errs


def validate_model(spec: ModelSpec, mkt: MarketParams) -> tuple[ModelSpec, MarketParams]:
    """Return the inputs unchanged if valid, else raise ValidationError
    carrying one entry per violated constraint."""
    errs = model_violations(spec, mkt)
    if errs:
        raise ValidationError(errs)
    return spec, mkt


@dataclass(frozen=True)
class PricingDynamics:
    """Pricing-measure dynamics of the state with its killing rate.

    a is the mean-reversion parameter after the preference tilt, q the
    killing-rate coefficient.  drift/vol/killing are scalar fields; the
    killing is q*x^2 (OU, quadratic drift) or q*x (CIR, 3/2).
    """

    family: Family
    a: float
    q: float
    b: float
    sigma: float
    theta_sq: float | None = None  # Black-Scholes only: theta'theta constant

    # drift is affine-in-x for OU/CIR, (b-ax)x for 3/2, b-ax^2 for quadratic
    def drift(self, x):
        return _drift(self.family, self.b, self.a, x)

    def drift_deriv(self, x):
        return _drift_deriv(self.family, self.b, self.a, x)

    def vol(self, x):
        return _vol(self.family, self.sigma, x)

    def vol_deriv(self, x):
        return _vol_deriv(self.family, self.sigma, x)

    def killing(self, x):
        if self.family is Family.BLACK_SCHOLES:
            return self.q * self.theta_sq * np.ones_like(np.asarray(x, dtype=float))
        if self.family in QUADRATIC_KILLING:
            return self.q * np.square(x)
        return self.q * np.asarray(x, dtype=float)

    @property
    def drift_level(self) -> float:
        return self.b

    @property
    def drift_speed(self) -> float:
        return self.a


@dataclass(frozen=True)
class HatDynamics:
    """Eigen-measure dynamics: same vol field, tilted drift.

    alpha is the eigen-measure mean-reversion; delta the OU drift level
    (None for the other families, whose level stays b).
    """

    family: Family
    alpha: float
    b: float
    sigma: float
    delta: float | None = None

    def drift(self, x):
        level = self.delta if self.family is Family.OU else self.b
        return _drift(self.family, level, self.alpha, x)

    def drift_deriv(self, x):
        level = self.delta if self.family is Family.OU else self.b
        return _drift_deriv(self.family, level, self.alpha, x)

    def vol(self, x):
        return _vol(self.family, self.sigma, x)

    def vol_deriv(self, x):
        return _vol_deriv(self.family, self.sigma, x)

    @property
    def drift_level(self) -> float:
        return self.delta if self.family is Family.OU else self.b

    @property
    def drift_speed(self) -> float:
        return self.alpha


def _drift(family: Family, level: float, speed: float, x):
    x = np.asarray(x, dtype=float)
    if family in (Family.OU, Family.CIR):
        return level - speed * x
    if family is Family.THREE_HALVES:
        return (level - speed * x) * x
    if family is Family.QUADRATIC_DRIFT:
        return level - speed * np.square(x)
    return np.zeros_like(x)


def _drift_deriv(family: Family, level: float, speed: float, x):
    x = np.asarray(x, dtype=float)
    if family in (Family.OU, Family.CIR):
        return np.full_like(x, -speed)
    if family is Family.THREE_HALVES:
        return level - 2.0 * speed * x
    if family is Family.QUADRATIC_DRIFT:
        return -2.0 * speed * x
    return np.zeros_like(x)


def _vol(family: Family, sigma: float, x):
    x = np.asarray(x, dtype=float)
    if family is Family.OU:
        return np.full_like(x, sigma)
    if family is Family.CIR:
        return sigma * np.sqrt(x)
    if family is Family.THREE_HALVES:
        return sigma * x**1.5
    if family is Family.QUADRATIC_DRIFT:
        return sigma * x
    return np.zeros_like(x)


def _vol_deriv(family: Family, sigma: float, x):
    x = np.asarray(x, dtype=float)
    if family is Family.OU:
        return np.zeros_like(x)
    if family is Family.CIR:
        return 0.5 * sigma / np.sqrt(x)
    if family is Family.THREE_HALVES:
        return 1.5 * sigma * np.sqrt(x)
    if family is Family.QUADRATIC_DRIFT:
        return np.full_like(x, sigma)
    return np.zeros_like(x)


def killing_coefficient(nu: float, rho_sq: float) -> float:
    """q = -nu (1 - nu + nu rho'rho) / (2 (1-nu)^2); positive for nu < 0."""
    return -nu * (1.0 - nu + nu * rho_sq) / (2.0 * (1.0 - nu) ** 2)


def tilted_speed(k: float, sigma: float, nu: float, rho_bar: float) -> float:
    """a = k - nu sigma rho_bar / (1 - nu)."""
    return k - nu * sigma * rho_bar / (1.0 - nu)


def derive_pricing_dynamics(spec: ModelSpec, mkt: MarketParams) -> PricingDynamics:
    """Map physical parameters and preferences to the pricing-measure state
    dynamics with killing.  Inputs are assumed validated; the q lower bound
    specific to this structure is still checked here."""
    q = killing_coefficient(mkt.nu, mkt.rho_sq)
    if spec.family is Family.BLACK_SCHOLES:
        theta = (spec.mu - mkt.r) / spec.sigma
        return PricingDynamics(spec.family, a=0.0, q=q, b=0.0, sigma=spec.sigma,
                               theta_sq=theta * theta)
    a = tilted_speed(spec.k, spec.sigma, mkt.nu, mkt.rho_bar)
    sig = spec.sigma
    if spec.family is Family.THREE_HALVES:
        bound = -((a + sig**2 / 2) ** 2) / (2 * sig**2) + sig**2 / 8
        if not q > bound:
            raise ValidationError(
                [f"q > -(a+sigma^2/2)^2/(2 sigma^2) + sigma^2/8 violated (q={q!r}, bound={bound!r})"]
            )
    else:
        bound = -(a * a) / (2 * sig**2)
        if not q > bound:
            raise ValidationError(
                [f"q > -a^2/(2 sigma^2) violated (q={q!r}, bound={bound!r})"]
            )
    return PricingDynamics(spec.family, a=a, q=q, b=spec.b, sigma=sig)


def hat_dynamics(spec: ModelSpec, eig) -> HatDynamics:
    """Eigen-measure dynamics for the eigenpair ``eig`` (needs .alpha and,
    for OU, .delta).  The vol field is untouched; only the drift is tilted
    by sigma^2 phi'/phi."""
    fam = spec.family
    if fam is Family.BLACK_SCHOLES:
        raise ValueError("Black-Scholes has no state process to tilt")
    delta = eig.delta if fam is Family.OU else None
    return HatDynamics(fam, alpha=eig.alpha, b=spec.b, sigma=spec.sigma, delta=delta)
