import math

import numpy as np
import pytest
from scipy.integrate import quad

from longsens import (
    Family,
    ModelSpec,
    PricingDynamics,
    RngPolicy,
    SchemeKind,
    SimScheme,
    default_scheme,
    derive_pricing_dynamics,
    eigenpair,
    first_variation,
    hat_dynamics,
    likelihood_ratio_weight,
    malliavin_weight_estimate,
    martingale_check,
    sample_paths,
)
from longsens.simulate import _BlockNoise, _evolve_block, dump_ensemble, load_ensemble
from longsens.specialfn import three_half_moment
from tests.conftest import FIG_PARAMS


class TestDeterminism:
    def test_bit_identical_reruns(self, fig_mkt, ou_spec):
        dyn = derive_pricing_dynamics(ou_spec, fig_mkt)
        scheme = default_scheme(Family.OU, 1.0, 50)
        a = sample_paths(dyn, scheme, 1000, RngPolicy(13), fig_mkt.xi)
        b = sample_paths(dyn, scheme, 1000, RngPolicy(13), fig_mkt.xi)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.integrated_killing, b.integrated_killing)
        np.testing.assert_array_equal(a.brownian_increments, b.brownian_increments)

    def test_paths_independent_of_total_count(self, fig_mkt, ou_spec):
        # path i is a function of (seed, i, n_steps) only
        dyn = derive_pricing_dynamics(ou_spec, fig_mkt)
        scheme = default_scheme(Family.OU, 1.0, 50)
        small = sample_paths(dyn, scheme, 200, RngPolicy(13), fig_mkt.xi)
        large = sample_paths(dyn, scheme, 9000, RngPolicy(13), fig_mkt.xi)
        np.testing.assert_array_equal(small.states, large.states[:200])

    def test_chi_square_scheme_deterministic(self, cir_test_spec, cir_test_mkt):
        dyn = derive_pricing_dynamics(cir_test_spec, cir_test_mkt)
        scheme = default_scheme(Family.CIR, 1.0, 20)
        a = sample_paths(dyn, scheme, 500, RngPolicy(29), cir_test_mkt.xi)
        b = sample_paths(dyn, scheme, 500, RngPolicy(29), cir_test_mkt.xi)
        np.testing.assert_array_equal(a.states, b.states)

    def test_crn_mode_replays_same_normals(self):
        n1 = _BlockNoise(RngPolicy(7, crn=True), 0, 64)
        n2 = _BlockNoise(RngPolicy(7, crn=True), 0, 64)
        np.testing.assert_array_equal(n1.normals(), n2.normals())
        np.testing.assert_array_equal(n1.gammas(0.7), n2.gammas(0.7))


class TestExactSchemes:
    def test_ou_zero_noise_is_ode(self):
        # sigma=0: the recursion must reproduce the exact mean-reversion ODE
        dyn = PricingDynamics(Family.OU, a=1.7, q=0.3, b=0.16, sigma=0.0)
        scheme = SimScheme(SchemeKind.EXACT_GAUSSIAN, T=2.0, n_steps=100)
        ens = sample_paths(dyn, scheme, 3, RngPolicy(1), 1.0)
        t = ens.times
        ode = 1.0 * np.exp(-1.7 * t) + (0.16 / 1.7) * (1 - np.exp(-1.7 * t))
        assert np.max(np.abs(ens.states - ode)) < 1e-10

    def test_cir_terminal_mean(self, cir_test_spec, cir_test_mkt):
        # one exact transition straight to T; mean must match the affine ODE
        dyn = derive_pricing_dynamics(cir_test_spec, cir_test_mkt)
        T = 2.0
        scheme = SimScheme(SchemeKind.EXACT_CIR, T=T, n_steps=1)
        ens = sample_paths(dyn, scheme, 1_000_000, RngPolicy(3), cir_test_mkt.xi)
        x = ens.terminal
        mean = (cir_test_mkt.xi * math.exp(-dyn.a * T)
                + (dyn.b / dyn.a) * (1 - math.exp(-dyn.a * T)))
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - mean) < 4 * se

    def test_three_halves_moment_vs_lemma(self, fig_mkt, three_halves_spec):
        spec = three_halves_spec
        dyn = derive_pricing_dynamics(spec, fig_mkt)
        eig = eigenpair(spec, dyn)
        hat = hat_dynamics(spec, eig)
        T = 3.0
        scheme = SimScheme(SchemeKind.RECIPROCAL_CIR, T=T, n_steps=1)
        ens = sample_paths(hat, scheme, 200_000, RngPolicy(8), fig_mkt.xi)
        w = ens.terminal**0.5
        se = w.std(ddof=1) / math.sqrt(w.size)
        oracle = three_half_moment(0.5, T, hat.b, hat.alpha, hat.sigma, fig_mkt.xi)
        assert abs(w.mean() - oracle) < 3 * se

    def test_positive_states_never_flagged(self, fig_mkt):
        for fam in (Family.CIR, Family.THREE_HALVES):
            spec = ModelSpec(fam, **FIG_PARAMS)
            dyn = derive_pricing_dynamics(spec, fig_mkt)
            ens = sample_paths(dyn, default_scheme(fam, 2.0, 50), 20_000,
                               RngPolicy(5), fig_mkt.xi)
            assert ens.n_flagged == 0
            assert np.all(ens.states > 0)

    def test_log_euler_stays_positive(self, fig_mkt, quad_spec):
        dyn = derive_pricing_dynamics(quad_spec, fig_mkt)
        ens = sample_paths(dyn, default_scheme(Family.QUADRATIC_DRIFT, 2.0),
                           20_000, RngPolicy(5), fig_mkt.xi)
        assert ens.n_flagged == 0
        assert np.all(ens.states > 0)

    def test_killing_integral_nonnegative(self, fig_mkt, ou_spec):
        dyn = derive_pricing_dynamics(ou_spec, fig_mkt)
        ens = sample_paths(dyn, default_scheme(Family.OU, 2.0, 50), 5000,
                           RngPolicy(5), fig_mkt.xi)
        assert np.all(ens.integrated_killing >= 0)


class TestFirstVariation:
    def test_ou_is_pure_decay(self, fig_mkt, ou_spec):
        dyn = derive_pricing_dynamics(ou_spec, fig_mkt)
        eig = eigenpair(ou_spec, dyn)
        hat = hat_dynamics(ou_spec, eig)
        scheme = SimScheme(SchemeKind.EULER, T=2.0, n_steps=100)
        ens = sample_paths(hat, scheme, 100, RngPolicy(11), fig_mkt.xi)
        ens = first_variation(ens, hat.drift_deriv, hat.vol_deriv)
        expected = np.exp(-hat.alpha * ens.times)
        np.testing.assert_allclose(
            ens.first_variation,
            np.broadcast_to(expected, ens.first_variation.shape), rtol=1e-12)

    def test_starts_at_one(self, fig_mkt):
        for fam in (Family.CIR, Family.QUADRATIC_DRIFT):
            spec = ModelSpec(fam, b=0.6, k=2.0, sigma=0.8)
            dyn = derive_pricing_dynamics(spec, fig_mkt)
            kind = SchemeKind.LOG_EULER if fam is Family.QUADRATIC_DRIFT else SchemeKind.EULER
            ens = sample_paths(dyn, SimScheme(kind, 1.0, 100), 64, RngPolicy(2),
                               fig_mkt.xi)
            ens = first_variation(ens, dyn.drift_deriv, dyn.vol_deriv)
            np.testing.assert_array_equal(ens.first_variation[:, 0], 1.0)

    def test_bump_oracle_quadratic_drift(self, fig_mkt, quad_spec):
        # pathwise derivative vs central bump of the initial state under
        # common random numbers
        dyn = derive_pricing_dynamics(quad_spec, fig_mkt)
        scheme = SimScheme(SchemeKind.LOG_EULER, T=1.0, n_steps=8000)
        rng, h, n = RngPolicy(3), 1e-4, 1000
        ens = sample_paths(dyn, scheme, n, rng, fig_mkt.xi)
        ens = first_variation(ens, dyn.drift_deriv, dyn.vol_deriv)
        up, _, _ = _evolve_block(dyn, scheme, fig_mkt.xi + h, _BlockNoise(rng, 0, n), False)
        dn, _, _ = _evolve_block(dyn, scheme, fig_mkt.xi - h, _BlockNoise(rng, 0, n), False)
        fd = (up[:, -1] - dn[:, -1]) / (2 * h)
        rel = np.abs(fd / ens.first_variation[:, -1] - 1.0)
        assert np.max(rel) < 1e-3

    def test_quadratic_generic_equals_explicit(self, fig_mkt, quad_spec):
        # the generic exponential formula must agree pathwise with the
        # model's explicit derivative sigma X_t exp(-2a int X - s^2(T-t)/2
        # + s(B_T - B_t)) on the same grid
        dyn = derive_pricing_dynamics(quad_spec, fig_mkt)
        scheme = SimScheme(SchemeKind.LOG_EULER, T=2.0, n_steps=400)
        ens = sample_paths(dyn, scheme, 500, RngPolicy(17), fig_mkt.xi)
        ens = first_variation(ens, dyn.drift_deriv, dyn.vol_deriv)
        dt = scheme.dt
        sig, a = dyn.sigma, dyn.a
        x = ens.states
        int_x = np.concatenate(
            [np.zeros((x.shape[0], 1)),
             np.cumsum(0.5 * dt * (x[:, :-1] + x[:, 1:]), axis=1)], axis=1)
        bhat = np.concatenate(
            [np.zeros((x.shape[0], 1)),
             np.cumsum(ens.brownian_increments, axis=1)], axis=1)
        explicit = np.exp(-2 * a * int_x - 0.5 * sig**2 * ens.times + sig * bhat)
        np.testing.assert_allclose(ens.first_variation, explicit, rtol=1e-10)

    def test_requires_brownian_driver(self, cir_test_spec, cir_test_mkt):
        dyn = derive_pricing_dynamics(cir_test_spec, cir_test_mkt)
        ens = sample_paths(dyn, default_scheme(Family.CIR, 1.0, 10), 100,
                           RngPolicy(1), cir_test_mkt.xi)
        with pytest.raises(ValueError, match="Euler"):
            first_variation(ens, dyn.drift_deriv, dyn.vol_deriv)


class TestWeights:
    def _ou_hat_ensemble(self, fig_mkt, ou_spec, T=2.0, n=100_000, steps=200, seed=21):
        dyn = derive_pricing_dynamics(ou_spec, fig_mkt)
        eig = eigenpair(ou_spec, dyn)
        hat = hat_dynamics(ou_spec, eig)
        scheme = SimScheme(SchemeKind.EULER, T=T, n_steps=steps)
        ens = sample_paths(hat, scheme, n, RngPolicy(seed), fig_mkt.xi)
        return hat, eig, ens

    def test_zero_perturbation_gives_zero(self, fig_mkt, ou_spec):
        hat, _, ens = self._ou_hat_ensemble(fig_mkt, ou_spec, n=1000, steps=50)
        w = likelihood_ratio_weight(ens, lambda x: np.zeros_like(x), hat.vol)
        np.testing.assert_array_equal(w, 0.0)
        ens = first_variation(ens, hat.drift_deriv, hat.vol_deriv)
        m = malliavin_weight_estimate(ens, lambda x: np.ones_like(x),
                                      lambda x: np.zeros_like(x))
        np.testing.assert_array_equal(m, 0.0)

    def test_weight_mean_is_zero(self, fig_mkt, ou_spec):
        # an Ito integral of an adapted integrand has zero mean
        hat, _, ens = self._ou_hat_ensemble(fig_mkt, ou_spec)
        w = likelihood_ratio_weight(ens, lambda x: np.ones_like(x), hat.vol)
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean()) < 3 * se

    def test_ou_level_sensitivity(self, fig_mkt, ou_spec):
        # bumping the drift level by eps moves E[X_T] by (1-e^{-aT})/a
        hat, _, ens = self._ou_hat_ensemble(fig_mkt, ou_spec)
        w = likelihood_ratio_weight(ens, lambda x: np.ones_like(x), hat.vol)
        est = ens.terminal * w
        se = est.std(ddof=1) / math.sqrt(est.size)
        target = (1 - math.exp(-hat.alpha * 2.0)) / hat.alpha
        assert abs(est.mean() - target) < 3 * se

    def test_malliavin_matches_likelihood_ratio(self, fig_mkt, ou_spec):
        # same derivative, two representations, one set of paths
        hat, eig, ens = self._ou_hat_ensemble(fig_mkt, ou_spec)
        ell = eig.ell
        kbar = lambda x: np.ones_like(np.asarray(x, dtype=float))
        lr = np.exp(ell * ens.terminal) * likelihood_ratio_weight(ens, kbar, hat.vol)
        ens = first_variation(ens, hat.drift_deriv, hat.vol_deriv)
        mal = malliavin_weight_estimate(
            ens, lambda x: ell * np.exp(ell * x), kbar)
        se = math.hypot(lr.std(ddof=1) / math.sqrt(lr.size),
                        mal.std(ddof=1) / math.sqrt(mal.size))
        assert abs(lr.mean() - mal.mean()) < 3 * se

    def test_malliavin_matches_bump(self, fig_mkt, ou_spec):
        # central FD in the drift level with common random numbers; a fine
        # grid keeps the O(dt) quadrature gap of the weight below the
        # Monte Carlo tolerance
        hat, eig, ens = self._ou_hat_ensemble(fig_mkt, ou_spec, n=20_000, steps=400)
        ell, h = eig.ell, 1e-3
        ens = first_variation(ens, hat.drift_deriv, hat.vol_deriv)
        kbar = lambda x: np.ones_like(np.asarray(x, dtype=float))
        mal = malliavin_weight_estimate(ens, lambda x: ell * np.exp(ell * x), kbar)

        import dataclasses
        scheme = SimScheme(SchemeKind.EULER, T=2.0, n_steps=400)
        vals = []
        for eps in (h, -h):
            bumped = dataclasses.replace(hat, delta=hat.delta + eps)
            b_ens = sample_paths(bumped, scheme, 20_000, RngPolicy(21), fig_mkt.xi)
            vals.append(np.exp(ell * b_ens.terminal))
        fd = (vals[0] - vals[1]) / (2 * h)
        se = math.hypot(fd.std(ddof=1) / math.sqrt(fd.size),
                        mal.std(ddof=1) / math.sqrt(mal.size))
        assert abs(fd.mean() - mal.mean()) < 3 * se

    def test_requires_brownian_driver(self, cir_test_spec, cir_test_mkt):
        dyn = derive_pricing_dynamics(cir_test_spec, cir_test_mkt)
        ens = sample_paths(dyn, default_scheme(Family.CIR, 1.0, 10), 100,
                           RngPolicy(1), cir_test_mkt.xi)
        with pytest.raises(ValueError, match="Euler"):
            likelihood_ratio_weight(ens, lambda x: x, dyn.vol)


class TestMartingale:
    def test_zero_killing_exact(self):
        spec = ModelSpec(Family.OU, b=0.16, k=2.0, sigma=0.8)
        dyn = PricingDynamics(Family.OU, a=2.0, q=0.0, b=0.16, sigma=0.8)
        eig = eigenpair(spec, dyn)
        ens = sample_paths(dyn, default_scheme(Family.OU, 2.0, 50), 500,
                           RngPolicy(4), 1.0)
        m = martingale_check(eig, ens, 1.0)
        assert m.mean == 1.0
        assert m.std_error == 0.0

    @pytest.mark.parametrize("fam", [Family.OU, Family.CIR])
    def test_unit_mean(self, fam, fig_mkt):
        spec = ModelSpec(fam, **FIG_PARAMS)
        dyn = derive_pricing_dynamics(spec, fig_mkt)
        eig = eigenpair(spec, dyn)
        ens = sample_paths(dyn, default_scheme(fam, 5.0), 100_000, RngPolicy(6),
                           fig_mkt.xi)
        m = martingale_check(eig, ens, fig_mkt.xi)
        assert abs(m.mean - 1.0) < 3 * m.std_error


class TestWeakConvergence:
    def test_log_euler_first_order(self, fig_mkt, quad_spec):
        # common-random-number weak errors against a 4096-step reference
        # halve (ratio 7/15 then 3/7) as the step count doubles
        dyn = derive_pricing_dynamics(quad_spec, fig_mkt)
        b, a, sig = dyn.b, dyn.a, dyn.sigma
        T, ref_n, levels = 1.0, 4096, [256, 512, 1024]
        n_paths, chunk = 100_000, 20_000
        sums = {n: 0.0 for n in levels + [ref_n]}
        gen = np.random.default_rng(2024)
        for _ in range(n_paths // chunk):
            z = gen.standard_normal((chunk, ref_n))
            for n in levels + [ref_n]:
                k = ref_n // n
                dt = T / n
                zn = z.reshape(chunk, n, k).sum(axis=2) / math.sqrt(k)
                lx = np.full(chunk, math.log(fig_mkt.xi))
                sq = math.sqrt(dt)
                for i in range(n):
                    lx = lx + (b * np.exp(-lx) - a * np.exp(lx)
                               - 0.5 * sig**2) * dt + sig * sq * zn[:, i]
                sums[n] += float(np.exp(lx).sum())
        means = {n: s / n_paths for n, s in sums.items()}
        errs = [means[n] - means[ref_n] for n in levels]
        assert all(abs(e) > 0 for e in errs)
        for coarse, fine in zip(errs, errs[1:]):
            assert 0.25 < fine / coarse < 0.65  # theory: 7/15 then 3/7


class TestEnsembleDump:
    def test_roundtrip(self, fig_mkt, ou_spec, tmp_path):
        dyn = derive_pricing_dynamics(ou_spec, fig_mkt)
        ens = sample_paths(dyn, default_scheme(Family.OU, 1.0, 10), 50,
                           RngPolicy(9), fig_mkt.xi)
        path = tmp_path / "ens.bin"
        dump_ensemble(ens, path)
        back = load_ensemble(path)
        np.testing.assert_array_equal(back.states, ens.states)
        np.testing.assert_array_equal(back.times, ens.times)
        assert back.seed == ens.seed
        assert back.measure == ens.measure

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b'{"magic": "something-else"}\n')
        with pytest.raises(ValueError):
            load_ensemble(path)
