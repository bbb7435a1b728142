import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats

from softtrunc.errors import ContractError, DomainError
from softtrunc.model import TimeEmbedding
from softtrunc.sde import SdeSpec
from softtrunc.weighting import (
    ImportanceDist,
    TruncationPrior,
    WeightingFn,
    general_weight_eval,
    iw_quantiles,
    iw_sample,
    prior_from_weight,
    prior_sample,
    weight_prior,
)

EPS = 1e-5


def logquad(f, a, b):
    return integrate.quad(lambda u: math.exp(u) * f(math.exp(u)), math.log(a), math.log(b),
                          limit=400, epsabs=1e-14, epsrel=1e-12)[0]


class TestTruncationPrior:
    @pytest.mark.parametrize("k", [0.0, 0.5, 1.0, 2.0, 5.0])
    def test_pdf_integrates_to_one(self, k):
        p = TruncationPrior(k, EPS, 1.0)
        assert logquad(lambda t: float(p.pdf(t)), EPS, 1.0) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("k", [0.5, 1.0, 2.0, 3.0])
    def test_normaliser_formula(self, k):
        p = TruncationPrior(k, EPS, 1.0)
        Z = math.log(1 / EPS) if k == 1 else (EPS ** (1 - k) - 1.0) / (k - 1)
        assert p.Z == pytest.approx(Z, rel=1e-12)

    def test_inverse_at_zero(self):
        assert float(prior_sample(TruncationPrior(1.0, EPS), 0.0)) == EPS

    def test_median_k1(self):
        p = TruncationPrior(1.0, EPS, 1.0)
        tau = float(prior_sample(p, 0.5))
        assert tau == pytest.approx(math.sqrt(EPS), rel=1e-12)
        root = optimize.brentq(lambda s: float(p.cdf(s)) - 0.5, EPS, 1.0, xtol=1e-15)
        assert tau == pytest.approx(root, rel=1e-9)

    def test_large_k_concentrates_at_eps(self):
        # the median sits at eps * 2^(1/(k-1)); k = 100 puts it within 1% of eps
        p = TruncationPrior(100.0, EPS, 1.0)
        med = np.median(p.sample(np.random.default_rng(0), 10_000))
        assert abs(med / EPS - 1) < 0.01
        assert float(p.ppf(0.5)) == pytest.approx(EPS * 2 ** (1 / 99), rel=1e-10)

    def test_delta(self):
        p = TruncationPrior.delta(EPS)
        assert np.all(p.sample(np.random.default_rng(0), 100) == EPS)
        assert float(p.cdf(EPS)) == 1.0 and float(p.cdf(EPS / 2)) == 0.0

    def test_huge_k_no_overflow(self):
        p = TruncationPrior(400.0, EPS, 1.0)
        assert math.isfinite(p.log_Z)
        assert float(p.cdf(1.0)) == 1.0

    @settings(max_examples=80, deadline=None)
    @given(k=st.floats(0.0, 20.0), u=st.floats(0.0, 0.999999))
    def test_round_trip(self, k, u):
        p = TruncationPrior(k, EPS, 1.0)
        assert float(p.cdf(p.ppf(u))) == pytest.approx(u, abs=1e-9)

    def test_invalid(self):
        with pytest.raises(DomainError):
            TruncationPrior(-1.0)
        with pytest.raises(DomainError):
            TruncationPrior(1.0, eps=2.0, T=1.0)


class TestImportanceDist:
    vp = SdeSpec.vp()

    def test_endpoints(self):
        d = ImportanceDist(self.vp, EPS)
        assert float(iw_sample(d, 0.0)) == pytest.approx(EPS, rel=1e-9)
        assert float(iw_sample(d, 1 - 1e-15)) == pytest.approx(1.0, rel=1e-9)
        np.testing.assert_allclose(d.cdf([EPS, 1.0]), [0.0, 1.0], atol=1e-15)

    def test_anchor_median(self):
        assert float(ImportanceDist(self.vp, EPS).cdf(0.106)) == pytest.approx(0.5, abs=0.02)

    def test_first_quartile_value(self):
        # frozen from the closed-form CDF (independently confirmed by quadrature below)
        d = ImportanceDist(self.vp, EPS)
        q = iw_quantiles(d, [0.25, 0.5, 0.75])
        np.testing.assert_allclose(q, [3.0046e-3, 0.11442, 0.63709], rtol=1e-3)

    @pytest.mark.parametrize("spec", [SdeSpec.vp(), SdeSpec.ve(), SdeSpec.rve()], ids=["VP", "VE", "RVE"])
    @pytest.mark.parametrize("tau", [EPS, 1e-3, 0.1])
    def test_pdf_integrates_and_cdf_matches_quadrature(self, spec, tau):
        d = ImportanceDist(spec, tau)
        assert logquad(lambda t: float(d.pdf(t)), tau, 1.0) == pytest.approx(1.0, abs=1e-8)
        for t in (2 * tau, 0.3):
            assert float(d.cdf(t)) == pytest.approx(logquad(lambda s: float(d.pdf(s)), tau, t), abs=1e-9)

    @pytest.mark.parametrize("spec", [SdeSpec.vp(), SdeSpec.ve(), SdeSpec.rve()], ids=["VP", "VE", "RVE"])
    def test_round_trip_and_bisection(self, spec):
        d = ImportanceDist(spec, EPS)
        u = np.linspace(0, 1, 1001)
        np.testing.assert_allclose(d.cdf(d.ppf(u)), u, atol=1e-9)
        u = np.linspace(0.01, 0.99, 17)
        np.testing.assert_allclose(d.ppf_bisect(u), d.ppf(u), rtol=1e-9, atol=1e-12)

    def test_empirical_quartiles(self):
        d = ImportanceDist(self.vp, EPS)
        x = d.sample(np.random.default_rng(3), 100_000)
        # within 0.5 percentage points of probability (about 3.6 standard errors at 1e5)
        emp = np.quantile(d.cdf(x), [0.25, 0.5, 0.75])
        np.testing.assert_allclose(emp, [0.25, 0.5, 0.75], atol=0.005)

    def test_quantiles_monotone_and_balanced_at_tau_01(self):
        d = ImportanceDist(self.vp, 0.1)
        q = iw_quantiles(d, [0, 0.25, 0.5, 0.75, 1])
        assert q[0] == pytest.approx(0.1) and q[-1] == pytest.approx(1.0)
        gaps = np.diff(q)
        assert np.all(gaps > 0)
        assert gaps.max() / gaps.min() < 10

    def test_tau_at_T_rejected(self):
        with pytest.raises(DomainError):
            ImportanceDist(self.vp, 1.0)

    def test_bad_probs(self):
        with pytest.raises(DomainError):
            iw_quantiles(ImportanceDist(self.vp), [1.5])


def test_eta_pushforward_uniform():
    spec = SdeSpec.vp()
    t = ImportanceDist(spec, spec.eps).sample(np.random.default_rng(7), 100_000)
    emb = TimeEmbedding("unbounded_vp")
    eta = emb(spec, t) / emb(spec, 1.0)
    assert stats.kstest(eta, "uniform").statistic < 0.01


class TestGeneralWeight:
    vp = SdeSpec.vp()

    def test_at_T(self):
        p = TruncationPrior(1.0, EPS)
        assert float(general_weight_eval(p, self.vp, 1.0)) == pytest.approx(float(self.vp.g2(1.0)))

    def test_below_eps(self):
        assert float(general_weight_eval(TruncationPrior(1.0, EPS), self.vp, EPS / 2)) == 0.0

    def test_k1_midpoint(self):
        p = TruncationPrior(1.0, EPS)
        cdf = logquad(lambda s: float(p.pdf(s)), EPS, 1e-3)
        assert cdf == pytest.approx(0.4, rel=1e-9)
        assert float(general_weight_eval(p, self.vp, 1e-3)) == pytest.approx(0.4 * float(self.vp.g2(1e-3)), rel=1e-9)


class TestPriorFromWeight:
    vp, ve = SdeSpec.vp(), SdeSpec.ve()

    def test_likelihood_is_pure_atom(self):
        pw = weight_prior(WeightingFn("likelihood"), self.vp)
        assert pw.atom == 1.0 and pw.Z == 1.0
        assert np.all(pw.density(np.linspace(EPS, 1, 50)) == 0)

    def test_scaled_likelihood(self):
        pw = prior_from_weight(lambda t: 3.0 * np.ones_like(np.asarray(t, float)), EPS, 1.0)
        assert pw.atom == pytest.approx(1.0) and pw.Z == pytest.approx(3.0)

    @pytest.mark.parametrize("analytic", [True, False])
    def test_recovers_power_prior(self, analytic):
        p = TruncationPrior(1.0, EPS)
        pw = weight_prior(WeightingFn("general", p), self.vp, analytic=analytic)
        assert pw.atom == 0.0
        t = np.geomspace(2 * EPS, 1.0, 200)
        err = np.abs(pw.density(t) - p.pdf(t)) / p.pdf(t)
        assert err.max() < 1e-5

    def test_mass_is_one(self):
        pw = weight_prior(WeightingFn("variance"), self.ve)
        mass = pw.atom + logquad(lambda t: float(pw.density(t)), EPS, 1.0)
        assert mass == pytest.approx(1.0, abs=1e-10)

    def test_variance_weight_ve_constants(self):
        pw = weight_prior(WeightingFn("variance"), self.ve)
        Z = float(self.ve.var(1.0) / self.ve.g2(1.0))
        assert pw.Z == pytest.approx(Z)
        assert pw.atom == pytest.approx(float(self.ve.var(EPS) / self.ve.g2(EPS)) / Z)
        # analytic derivative against central differences of sigma^2 / g^2
        t = np.linspace(0.1, 0.9, 9)
        h = 1e-4
        r = lambda s: self.ve.var(s) / self.ve.g2(s)
        np.testing.assert_allclose(pw.density(t) * Z, (r(t + h) - r(t - h)) / (2 * h), rtol=1e-6)

    def test_variance_weight_vp_violates_monotonicity(self):
        # sigma^2 / beta peaks near t = 0.35 for beta in [0.1, 20]
        with pytest.raises(ContractError):
            weight_prior(WeightingFn("variance"), self.vp)

    def test_decreasing_rejected(self):
        with pytest.raises(ContractError):
            prior_from_weight(lambda t: 1.0 - np.asarray(t) / 2, EPS, 1.0)


def test_weighting_requires_prior():
    with pytest.raises(ContractError):
        WeightingFn("general")
