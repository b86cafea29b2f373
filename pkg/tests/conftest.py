import math

import pytest

from longsens import Family, MarketParams, ModelSpec

# Published comparison parameter set: b=0.16, sigma=0.8, k=2, nu=-2,
# rho_bar=-0.5 (scalar correlation, so rho'rho = 0.25).
FIG_PARAMS = dict(b=0.16, k=2.0, sigma=0.8)


@pytest.fixture
def fig_mkt() -> MarketParams:
    return MarketParams(r=0.02, omega=1.0, xi=1.0, nu=-2.0,
                        rho_bar=-0.5, rho_sq=0.25)


@pytest.fixture
def ou_spec() -> ModelSpec:
    return ModelSpec(Family.OU, **FIG_PARAMS)


@pytest.fixture
def cir_spec() -> ModelSpec:
    return ModelSpec(Family.CIR, **FIG_PARAMS)


@pytest.fixture
def three_halves_spec() -> ModelSpec:
    return ModelSpec(Family.THREE_HALVES, **FIG_PARAMS)


@pytest.fixture
def quad_spec() -> ModelSpec:
    return ModelSpec(Family.QUADRATIC_DRIFT, **FIG_PARAMS)


# Square-root-diffusion test point with a comfortable Feller ratio
# (2b/sigma^2 = 1.2): k=1, sigma=1, b=0.6, nu=-3, uncorrelated noise,
# which lands on a=1, q=0.375.
@pytest.fixture
def cir_test_spec() -> ModelSpec:
    return ModelSpec(Family.CIR, b=0.6, k=1.0, sigma=1.0)


@pytest.fixture
def cir_test_mkt() -> MarketParams:
    return MarketParams(r=0.02, omega=1.0, xi=1.0, nu=-3.0,
                        rho_bar=0.0, rho_sq=0.0)


def zscore(a: float, b: float, se_a: float, se_b: float = 0.0) -> float:
    return abs(a - b) / math.hypot(se_a, se_b)
