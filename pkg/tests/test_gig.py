import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from harrisvol.errors import DomainError, ValidationError
from harrisvol.gig import (
    GigParams,
    gig_cdf,
    gig_kl,
    gig_logpdf,
    gig_moments,
    gig_pdf,
    gig_sample,
)
from harrisvol.numerics import quad_integrate

P034 = GigParams(0.0, 3.0, 4.0)

KL_TABLE = [
    (GigParams(3.5, 0.8, 0.6), 0.06),
    (GigParams(-1.0, 2.0, 10.0), 0.36),
    (GigParams(2.0, 10.0, 6.0), 2.48),
    (GigParams(7.0, 3.0, 4.0), 6.05),
    (GigParams(50.0, 20.0, 4.0), 49.75),
]


class TestParams:
    def test_validation(self):
        with pytest.raises(ValidationError):
            GigParams(0.0, 1.0, 0.0)
        with pytest.raises(ValidationError):
            GigParams(1.0, -0.1, 1.0)
        with pytest.raises(ValidationError):
            GigParams(0.0, 0.0, 1.0)  # kappa must be positive when lambda = 0
        GigParams(2.0, 0.0, 1.0)  # gamma-limit corner is constructible


class TestLogpdf:
    def test_normalization(self):
        p = GigParams(-2.0, 4.0, 1.0)
        total = quad_integrate(lambda x: float(gig_pdf(p, x)), 0.0, np.inf, 1e-9)
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_half_integer_ratio_hand_algebra(self):
        kappa, eta = 2.5, 1.7
        p = GigParams(0.5, kappa, eta)
        got = gig_logpdf(p, 1.0) - gig_logpdf(p, 2.0)
        want = (0.5 - 1.0) * (math.log(1.0) - math.log(2.0)) - 0.5 * kappa * (
            (eta / 1.0 + 1.0 / eta) - (eta / 2.0 + 2.0 / eta)
        )
        assert got == pytest.approx(want, rel=1e-12)

    def test_reference_density_finite_unimodal(self):
        grid = np.linspace(0.01, 40.0, 4000)
        dens = gig_pdf(P034, grid)
        assert np.all(np.isfinite(dens))
        peak = int(np.argmax(dens))
        assert np.all(np.diff(dens[:peak + 1]) >= -1e-15)
        assert np.all(np.diff(dens[peak:]) <= 1e-15)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            gig_logpdf(P034, 0.0)
        with pytest.raises(DomainError):
            gig_logpdf(P034, -1.0)


class TestMoments:
    def test_against_quadrature(self):
        mean, inv_mean, log_mean = gig_moments(P034)
        q_mean = quad_integrate(lambda x: x * float(gig_pdf(P034, x)), 0.0, np.inf, 1e-10)
        q_inv = quad_integrate(lambda x: float(gig_pdf(P034, x)) / x, 0.0, np.inf, 1e-10)
        q_log = quad_integrate(lambda x: math.log(x) * float(gig_pdf(P034, x)), 0.0, np.inf, 1e-10)
        assert mean == pytest.approx(q_mean, abs=1e-6)
        assert inv_mean == pytest.approx(q_inv, abs=1e-6)
        assert log_mean == pytest.approx(q_log, abs=1e-6)

    def test_reciprocal_closure(self):
        p = GigParams(1.7, 2.3, 0.8)
        flipped = GigParams(-1.7, 2.3, 1.0 / 0.8)
        assert gig_moments(p)[1] == pytest.approx(gig_moments(flipped)[0], rel=1e-10)

    def test_half_integer_closed_form(self):
        # K_{3/2}(x)/K_{1/2}(x) = 1 + 1/x
        mean = gig_moments(GigParams(0.5, 2.0, 1.0))[0]
        assert mean == pytest.approx(1.5, rel=1e-10)

    def test_kappa_zero_unsupported(self):
        with pytest.raises(DomainError):
            gig_moments(GigParams(2.0, 0.0, 1.0))


class TestSampler:
    def test_empty(self, rng):
        assert gig_sample(GigParams(-2, 4, 1), 0, rng).size == 0

    def test_mean_matches_ratio_identity(self, rng):
        p = GigParams(-2.0, 4.0, 1.0)
        x = gig_sample(p, 1_000_000, rng)
        mean = gig_moments(p)[0]
        se = x.std() / math.sqrt(x.size)
        assert abs(x.mean() - mean) < 3.0 * se

    def test_half_integer_ks_vs_cdf_inversion(self, rng):
        p = GigParams(0.5, 2.0, 1.0)
        x = gig_sample(p, 50_000, rng)
        # inverse-CDF oracle draws through the numeric CDF grid
        grid = np.linspace(1e-6, 30.0, 20_000)
        cdf = gig_cdf(p, grid)
        u = rng.random(50_000)
        oracle = np.interp(u, cdf, grid)
        assert stats.ks_2samp(x, oracle).pvalue > 0.05

    def test_moment_identities_random_parameter_sets(self, rng):
        for _ in range(20):
            p = GigParams(rng.uniform(-5, 5), rng.uniform(0.1, 50.0), rng.uniform(0.1, 4.0))
            x = gig_sample(p, 1_000_000, rng)
            mean, inv_mean, log_mean = gig_moments(p)
            for sample, target in ((x, mean), (1.0 / x, inv_mean), (np.log(x), log_mean)):
                se = sample.std() / math.sqrt(sample.size)
                assert abs(sample.mean() - target) < 3.5 * se


class TestKl:
    def test_identity(self):
        assert gig_kl(P034, P034) == 0.0

    @pytest.mark.parametrize("q,want", KL_TABLE)
    def test_reference_table(self, q, want):
        assert gig_kl(P034, q) == pytest.approx(want, abs=0.01)

    @pytest.mark.parametrize("q,want", KL_TABLE)
    def test_closed_form_matches_quadrature(self, q, want):
        def integrand(x):
            lp = float(gig_logpdf(P034, x))
            return math.exp(lp) * (lp - float(gig_logpdf(q, x)))

        quad_kl = quad_integrate(integrand, 0.0, np.inf, 1e-8)
        assert gig_kl(P034, q) == pytest.approx(quad_kl, abs=1e-4)

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(-5.0, 5.0), st.floats(0.1, 50.0), st.floats(0.1, 4.0),
        st.floats(-5.0, 5.0), st.floats(0.1, 50.0), st.floats(0.1, 4.0),
    )
    def test_nonnegative(self, lam1, kap1, eta1, lam2, kap2, eta2):
        p = GigParams(lam1, kap1, eta1)
        q = GigParams(lam2, kap2, eta2)
        kl = gig_kl(p, q)
        assert kl >= -1e-9
        if (abs(lam1 - lam2) > 0.1 or abs(kap1 - kap2) > 0.1
                or abs(eta1 - eta2) > 0.1):
            assert kl >= 0.0

    def test_zero_only_at_equality(self):
        q = GigParams(0.0, 3.0, 4.2)
        assert gig_kl(P034, q) > 0.0
