import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from longsens.specialfn import (
    SeriesControl,
    cir_mgf,
    gaussian_quad_exp_moment,
    kummer_1f1,
    log_gamma,
    three_half_moment,
)


class TestLogGamma:
    def test_at_one(self):
        assert abs(log_gamma(1.0)) < 1e-12

    def test_at_half(self):
        assert log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), rel=1e-12)

    @pytest.mark.parametrize("x", [0.3, 1.7, 9.2])
    def test_recurrence(self, x):
        assert log_gamma(x + 1.0) - log_gamma(x) == pytest.approx(math.log(x), abs=1e-12)

    def test_against_stdlib(self):
        for x in np.geomspace(0.05, 120.0, 60):
            assert log_gamma(float(x)) == pytest.approx(math.lgamma(x), rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("x", [0.0, -1.5])
    def test_domain(self, x):
        with pytest.raises(ValueError):
            log_gamma(x)

    @given(st.floats(min_value=1e-3, max_value=60.0))
    @settings(max_examples=50, deadline=None)
    def test_recurrence_property(self, x):
        assert log_gamma(x + 1.0) - log_gamma(x) == pytest.approx(math.log(x), abs=1e-11)


class TestKummer1F1:
    def test_z_zero(self):
        assert kummer_1f1(1.3, 2.7, 0.0) == 1.0

    def test_exponential_identity(self):
        assert kummer_1f1(1.0, 1.0, 0.7) == pytest.approx(math.exp(0.7), rel=1e-12)

    def test_against_extended_precision_series(self):
        # brute-force oracle: 200 series terms at 50 decimal digits
        import mpmath

        with mpmath.workdps(50):
            a, b, z = mpmath.mpf(2), mpmath.mpf(3), mpmath.mpf("-0.5")
            total = mpmath.mpf(0)
            for n in range(200):
                total += (mpmath.rf(a, n) / mpmath.rf(b, n)
                          * z**n / mpmath.factorial(n))
            oracle = float(total)
        assert kummer_1f1(2.0, 3.0, -0.5) == pytest.approx(oracle, rel=1e-12)

    def test_contiguous_relation(self):
        rng = np.random.default_rng(314)
        for _ in range(100):
            a = float(rng.uniform(-3, 3))
            b = float(rng.uniform(0.5, 6))
            z = float(rng.uniform(-5, 5))
            lhs = ((b - a) * kummer_1f1(a - 1, b, z)
                   + (2 * a - b + z) * kummer_1f1(a, b, z)
                   - a * kummer_1f1(a + 1, b, z))
            assert abs(lhs) <= 1e-9 * max(abs(kummer_1f1(a, b, z)), 1.0)

    def test_bad_b(self):
        with pytest.raises(ValueError):
            kummer_1f1(1.0, -2.0, 0.5)

    def test_non_convergence(self):
        with pytest.raises(ArithmeticError):
            kummer_1f1(5.0, 1.5, 80.0, SeriesControl(max_terms=3))

    def test_series_control_domain(self):
        with pytest.raises(ValueError):
            SeriesControl(max_terms=0)
        with pytest.raises(ValueError):
            SeriesControl(rel_tol=0.0)


class TestCirMgf:
    def test_gamma_zero(self):
        assert cir_mgf(0.0, 3.0, b=0.6, alpha=1.3, sigma=1.0, x=1.0) == 1.0

    def test_time_zero(self):
        assert cir_mgf(0.3, 0.0, b=0.6, alpha=1.3, sigma=1.0, x=1.2) == pytest.approx(
            math.exp(0.3 * 1.2), rel=1e-14)

    def test_gamma_bound(self):
        with pytest.raises(ValueError):
            cir_mgf(2.7, 1.0, b=0.6, alpha=1.3, sigma=1.0, x=1.0)

    def test_derivative_at_zero_is_mean(self):
        # d/dgamma at 0 must equal the mean x e^{-alpha T} + (b/alpha)(1 - e^{-alpha T})
        b, alpha, sigma, x, T = 0.6, 1.3, 1.0, 1.0, 2.0
        h = 1e-6
        fd = (cir_mgf(h, T, b, alpha, sigma, x)
              - cir_mgf(-h, T, b, alpha, sigma, x)) / (2 * h)
        mean = x * math.exp(-alpha * T) + (b / alpha) * (1 - math.exp(-alpha * T))
        assert fd == pytest.approx(mean, rel=1e-6)

    def test_against_exact_transition_sampling(self):
        # one exact noncentral-chi-square step straight to T
        b, alpha, sigma, x, T, gam = 0.6, 1.0, 1.0, 1.0, 2.0, 0.3
        rng = np.random.default_rng(77)
        d = 4 * b / sigma**2
        e = math.exp(-alpha * T)
        c = sigma**2 * (1 - e) / (4 * alpha)
        n = 100_000
        z = rng.standard_normal(n)
        g = 2 * rng.standard_gamma((d - 1) / 2, n)
        xT = c * ((z + math.sqrt(x * e / c)) ** 2 + g)
        w = np.exp(gam * xT)
        se = w.std(ddof=1) / math.sqrt(n)
        assert abs(w.mean() - cir_mgf(gam, T, b, alpha, sigma, x)) < 3 * se


def _three_halves_terminal(b, alpha, sigma, xi, T, n, seed):
    """Exact draw of X_T for the 3/2 diffusion via its reciprocal
    square-root diffusion, one transition straight to T."""
    rng = np.random.default_rng(seed)
    level, speed = alpha + sigma**2, b
    d = 4 * level / sigma**2
    e = math.exp(-speed * T)
    c = sigma**2 * (1 - e) / (4 * speed)
    z = rng.standard_normal(n)
    g = 2 * rng.standard_gamma((d - 1) / 2, n)
    v = c * ((z + np.sqrt((1 / xi) * e / c)) ** 2 + g)
    return 1.0 / v


class TestThreeHalfMoment:
    def test_a_zero(self):
        assert three_half_moment(0.0, 3.0, b=0.16, alpha=1.9, sigma=0.8, xi=1.0) \
            == pytest.approx(1.0, rel=1e-14)

    def test_long_horizon_limit(self):
        # convergence rate is e^{-bT}, so the horizon must satisfy
        # bT >> ln(1/tol): T=60 only reaches ~7e-5 at b=0.16
        b, alpha, sigma = 0.16, 1.9, 0.8
        A = 0.5
        n = 2 * alpha / sigma**2 + 2
        limit = math.exp(log_gamma(n - A) - log_gamma(n)) * (2 * b / sigma**2) ** A
        assert three_half_moment(A, 60.0, b, alpha, sigma, xi=1.0) == pytest.approx(
            limit, rel=1e-4)
        assert three_half_moment(A, 150.0, b, alpha, sigma, xi=1.0) == pytest.approx(
            limit, rel=1e-8)

    def test_against_exact_transition_sampling(self):
        b, alpha, sigma, xi, T, A = 0.16, 1.9, 0.8, 1.0, 3.0, 0.5
        xT = _three_halves_terminal(b, alpha, sigma, xi, T, 200_000, seed=5)
        w = xT**A
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean() - three_half_moment(A, T, b, alpha, sigma, xi)) < 3 * se

    def test_first_moment_matches_monte_carlo(self):
        b, alpha, sigma, xi, T = 0.6, 1.5, 0.9, 0.8, 2.0
        xT = _three_halves_terminal(b, alpha, sigma, xi, T, 200_000, seed=6)
        se = xT.std(ddof=1) / math.sqrt(xT.size)
        assert abs(xT.mean() - three_half_moment(1.0, T, b, alpha, sigma, xi)) < 3 * se

    def test_domain(self):
        with pytest.raises(ValueError):
            three_half_moment(50.0, 1.0, b=0.16, alpha=1.9, sigma=0.8, xi=1.0)
        with pytest.raises(ValueError):
            three_half_moment(0.5, 0.0, b=0.16, alpha=1.9, sigma=0.8, xi=1.0)


class TestGaussianQuadExpMoment:
    def test_eta_zero_is_mgf(self):
        ell, m, s2 = -0.4, 0.3, 0.7
        assert gaussian_quad_exp_moment(0.0, ell, m, s2) == pytest.approx(
            math.exp(ell * m + 0.5 * ell**2 * s2), rel=1e-14)

    def test_pure_quadratic(self):
        assert gaussian_quad_exp_moment(0.5, 0.0, 0.0, 1.0) == pytest.approx(
            (1 - 0.5) ** -0.5, rel=1e-14)

    def test_against_quadrature(self):
        eta, ell, m, s2 = 0.3, -0.2, 0.5, 0.4
        oracle, err = quad(
            lambda x: math.exp(0.5 * eta * x * x + ell * x)
            * math.exp(-((x - m) ** 2) / (2 * s2)) / math.sqrt(2 * math.pi * s2),
            -30, 30, epsabs=1e-13, epsrel=1e-13)
        assert gaussian_quad_exp_moment(eta, ell, m, s2) == pytest.approx(oracle, rel=1e-10)

    def test_divergent(self):
        with pytest.raises(ValueError):
            gaussian_quad_exp_moment(2.0, 0.0, 0.0, 0.6)

    @given(st.floats(min_value=0.0, max_value=0.9))
    @settings(max_examples=40, deadline=None)
    def test_centered_monotonicity(self, eta):
        assert gaussian_quad_exp_moment(eta, 0.0, 0.0, 1.0) >= 1.0
