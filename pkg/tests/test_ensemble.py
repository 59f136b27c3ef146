import numpy as np
import pytest
from scipy.special import exp1

from memhomog import ensemble as en
from memhomog import fem
from memhomog import helfrich as hf
from memhomog import surface as surf


def annealed_closed_form(delta):
    """(1 + E[1/(1 + delta T)]) / 2 for T ~ Exp(1), via the exponential integral."""
    z = 1.0 / delta
    return 0.5 * (1.0 + z * np.exp(z) * exp1(z))


class TestQuenched:
    def test_deterministic(self):
        p = hf.HelfrichParams(20.0, 0.0, 3.0)
        a = en.quenched_average(p, 3, 16, seed=4)
        b = en.quenched_average(p, 3, 16, seed=4)
        np.testing.assert_array_equal(a.perSample, b.perSample)
        assert a.to_record() == b.to_record()
        c = en.quenched_average(p, 3, 16, seed=5)
        assert not np.array_equal(a.perSample, c.perSample)

    def test_sample_streams_are_prefix_stable(self):
        # sample i depends only on (seed, i), not on nSamples
        p = hf.HelfrichParams(20.0, 0.0, 3.0)
        a = en.quenched_average(p, 2, 16, seed=1)
        b = en.quenched_average(p, 4, 16, seed=1)
        np.testing.assert_array_equal(a.perSample, b.perSample[:2])

    def test_stiff_membrane_is_flat(self):
        s = en.quenched_average(hf.HelfrichParams(1e3, 0.0, 8.0), 4, 32, seed=0)
        np.testing.assert_allclose(s.meanD, np.eye(2), atol=0.01)

    def test_isotropy_and_bound_transfer(self):
        s = en.quenched_average(hf.HelfrichParams(2.0, 0.0, 4.0), 24, 32, seed=3)
        se = s.stderrD
        assert abs(s.meanD[0, 1]) < 3 * se[0, 1]
        assert abs(s.meanD[0, 0] - s.meanD[1, 1]) < 3 * np.hypot(se[0, 0], se[1, 1])
        for e in (np.array([1.0, 0]), np.array([0, 1.0]), np.array([1.0, 1.0]) / np.sqrt(2)):
            assert 0 < e @ s.meanLower @ e <= e @ s.meanD @ e <= e @ s.meanUpper @ e <= 1

    def test_failure_records_seed_and_index(self, monkeypatch):
        calls = {"n": 0}
        real = fem.effective_tensor

        def flaky(mesh, spec, tol=1e-10):
            calls["n"] += 1
            if calls["n"] == 2:
                raise fem.SolverError("forced", 1.0, 7)
            return real(mesh, spec, tol)

        monkeypatch.setattr(fem, "effective_tensor", flaky)
        with pytest.raises(en.EnsembleError) as ei:
            en.quenched_average(hf.HelfrichParams(20.0, 0.0, 2.0), 3, 8, seed=11)
        assert ei.value.seed == 11 and ei.value.index == 1

    def test_isotropic_gap_matches_componentwise_definition(self):
        s = en.quenched_average(hf.HelfrichParams(20.0, 0.0, 3.0), 6, 16, seed=2)
        g, se = s.isotropic_gap()
        ref = 0.5 * (s.meanD[0, 0] + s.meanD[1, 1]) - s.meanAreaScaling
        assert g == pytest.approx(ref, abs=1e-14)
        assert se > 0

    def test_rejects_empty(self):
        with pytest.raises(hf.ConfigError):
            en.quenched_average(hf.HelfrichParams(), 0)


class TestWeakDisorder:
    def test_unit_cutoff(self):
        assert en.weak_disorder_estimate(hf.HelfrichParams(1.0, 0.0, 1.0)) == pytest.approx(
            1 - 0.5 / np.pi ** 2, rel=1e-14)
        assert en.weak_disorder_estimate(hf.HelfrichParams(1.0, 0.0, 1.0)) == pytest.approx(0.94934, abs=1e-5)

    def test_vanishing_disorder(self):
        assert en.weak_disorder_estimate(hf.HelfrichParams(1.0, 1e14, 4.0)) == pytest.approx(1.0, abs=1e-12)


class TestAnnealed:
    @pytest.mark.parametrize("kappa", [0.1, 1.0, 10.0])
    def test_exact_quadrature_matches_exponential_integral(self, kappa):
        p = hf.HelfrichParams(kappa, 0.0, 8.0)
        delta = hf.disorder_parameter(hf.build_spectrum(p))
        assert en.annealed_exact(p) == pytest.approx(annealed_closed_form(delta), rel=1e-10)

    @pytest.mark.parametrize("kappa", [0.1, 1.0, 10.0])
    def test_monte_carlo_matches_exact(self, kappa):
        p = hf.HelfrichParams(kappa, 0.0, 8.0)
        r = en.annealed_tensor(p, 20_000, 2, seed=kappa_seed(kappa))
        assert abs(r.D - en.annealed_exact(p)) < 3 * r.stderr
        assert 0.5 < r.D < 1

    def test_flat_limit(self):
        r = en.annealed_tensor(hf.HelfrichParams(1e3, 0.0, 8.0), 2000, 2, seed=0)
        assert r.D == pytest.approx(1.0, abs=1e-3)

    def test_single_sample_has_no_stderr(self):
        r = en.annealed_tensor(hf.HelfrichParams(1.0, 0.0, 2.0), 1, 2, seed=0)
        assert np.isnan(r.stderr)

    def test_deterministic_and_chunk_independent(self):
        p = hf.HelfrichParams(1.0, 0.0, 4.0)
        a = en.annealed_tensor(p, 5000, 2, seed=3)
        b = en.annealed_tensor(p, 5000, 2, seed=3)
        assert a.D == b.D
        c = en.annealed_tensor(p, 5000, 2, seed=3, chunk=5000)
        assert c.D == pytest.approx(a.D, abs=1e-14)


def kappa_seed(kappa):
    return int(round(1000 * kappa))


class TestDriftCheck:
    pts = np.array([[0.1, 0.2], [0.7, 0.4], [0.5, 0.9]])

    def test_zero_mean(self):
        r = en.annealed_drift_check(hf.HelfrichParams(1.0, 0.0, 4.0), 20_000, self.pts, seed=1)
        assert r.stderr_defined and r.within(3.0)

    def test_single_sample_flagged(self):
        r = en.annealed_drift_check(hf.HelfrichParams(1.0, 0.0, 4.0), 1, self.pts, seed=1)
        assert not r.stderr_defined and not r.within()
        spec = hf.build_spectrum(hf.HelfrichParams(1.0, 0.0, 4.0))
        _, a, b = hf.sample_half_lattice_coefficients(spec, hf.make_rng(1), size=1)
        k = spec.modes[hf.half_lattice(spec)]
        s = surf.Fourier(tuple((int(k1), int(k2), float(x), float(y))
                               for (k1, k2), x, y in zip(k, a[0], b[0])))
        np.testing.assert_allclose(r.mean, surf.drift_F(s, self.pts), rtol=1e-10, atol=1e-12)

    def test_reflection_pairing_is_exact(self):
        r = en.annealed_drift_check(hf.HelfrichParams(1.0, 0.0, 4.0), 2000, self.pts, seed=1,
                                    antithetic=True)
        assert np.abs(r.mean).max() < 1e-12

    def test_reflection_preserves_gradient_and_flips_hessian(self):
        spec = hf.build_spectrum(hf.HelfrichParams(1.0, 0.0, 3.0))
        k, a, b = hf.sample_half_lattice_coefficients(spec, 0)
        x0 = np.array([0.3, 0.6])
        a2, b2 = en._reflect_pair(k.astype(float), a, b, x0)
        mk = lambda A, B: surf.Fourier(tuple((int(k1), int(k2), float(u), float(v))
                                             for (k1, k2), u, v in zip(k, A, B)))
        g1, H1 = surf.eval_derivatives(mk(a, b), x0)
        g2, H2 = surf.eval_derivatives(mk(a2, b2), x0)
        np.testing.assert_allclose(g2, g1, atol=1e-12)
        np.testing.assert_allclose(H2, -H1, atol=1e-10)


class TestCase3Drift:
    g, p = en.single_mode_coefficients(hf.HelfrichParams(1e-3, 0.0, 1.5))

    def test_single_mode_coefficients(self):
        q2 = 2 * (2 * np.pi) ** 2
        assert self.p == pytest.approx(1 / (1e-3 * q2 * q2))
        assert self.g == pytest.approx(1e-3 * q2 ** 1.5)

    def test_symmetric_mode_has_no_drift(self):
        L = en.case3_drift_estimate(self.g, self.p, 32, 9)
        assert np.abs(L).max() < 1e-3

    def test_sign_flip_of_mode(self):
        a = en.case3_drift_estimate(self.g, self.p, 32, 9)
        b = en.case3_drift_estimate(self.g, self.p, 32, 9, mode=lambda e: surf.EggCarton(-e))
        np.testing.assert_allclose(b, a, atol=1e-12)
        assert np.abs(b).max() < 1e-3

    def test_corrector_constants_do_not_matter(self):
        base = en.case3_drift_estimate(self.g, self.p, 32, 9)
        sh = np.linspace(-1, 1, 9)[:, None] ** 2 * np.array([1.0, 2.0])
        moved = en.case3_drift_estimate(self.g, self.p, 32, 9, shifts=sh)
        assert np.abs(moved - base).max() < 1e-3

    def test_frozen_amplitude_limit(self):
        L = en.case3_drift_estimate(self.g, 1e-10, 16, 5)
        assert np.abs(L).max() < 1e-8

    def test_too_coarse_grid(self):
        with pytest.raises(hf.ConfigError):
            en.case3_drift_estimate(self.g, self.p, 16, 4)
