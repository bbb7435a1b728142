import math

import numpy as np
import pytest

from softtrunc.errors import ContractError, NumericalError
from softtrunc.likelihood import sample_quality
from softtrunc.model import LinearScore
from softtrunc.oracle import ExactScore, GaussianMixture, ring_mixture
from softtrunc.samplers import (
    SamplerConfig,
    _reverse,
    ode_flow,
    pc_sample,
    regenerate_from_tau,
    reverse_sde_em,
    rk4_integrate,
    sample,
    time_grid,
)
from softtrunc.sde import SdeSpec

VP, VE, RVE = SdeSpec.vp(), SdeSpec.ve(), SdeSpec.rve()
STANDARD = LinearScore(lambda t: 1.0)


def check_standard_normal(x):
    n = x.shape[0]
    assert np.all(np.abs(x.mean(0)) < 3 * math.sqrt(1 / n))
    cov = np.cov(x.T)
    assert np.all(np.abs(np.diag(cov) - 1) < 3 * math.sqrt(2 / n))
    assert abs(cov[0, 1]) < 3 * math.sqrt(1 / n)


class TestConfig:
    def test_defaults(self):
        assert SamplerConfig().interval(VP) == (1.0, VP.eps)

    @pytest.mark.parametrize("kw", [dict(steps=0), dict(kind="ddim"), dict(t_start=0.5, t_end=0.6), dict(t_end=1e-9)])
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            SamplerConfig(**kw).interval(VP)

    def test_grids(self):
        g = time_grid(RVE, 1.0, RVE.eps, 10)
        np.testing.assert_allclose(g[1:] / g[:-1], (RVE.eps) ** 0.1, rtol=1e-12)
        np.testing.assert_allclose(np.diff(time_grid(VP, 1.0, 0.0, 4)), -0.25)


@pytest.mark.parametrize("kind", ["em", "pc", "ode"])
def test_stationary_standard_normal(kind):
    x = sample(STANDARD, VP, SamplerConfig(kind, steps=1000), 5000, np.random.default_rng(0))
    check_standard_normal(x)


class TestReverse:
    def test_more_steps_better(self):
        gm = ring_mixture()
        net = ExactScore(gm, VP)
        ref = gm.sample(2000, 1)
        coarse = reverse_sde_em(net, VP, SamplerConfig("em", steps=1), 2000, 2)
        fine = reverse_sde_em(net, VP, SamplerConfig("em", steps=1000), 2000, 2)
        assert sample_quality(fine, ref) < sample_quality(coarse, ref)

    def test_deterministic(self):
        cfg = SamplerConfig("pc", steps=20)
        a = pc_sample(STANDARD, VP, cfg, 50, 3)
        b = pc_sample(STANDARD, VP, cfg, 50, 3)
        assert np.array_equal(a, b)

    def test_snr_zero_limit(self):
        gm = ring_mixture()
        net = ExactScore(gm, VE)
        pred = _reverse(net, VE, SamplerConfig("pc", steps=50, snr=0.16), 200, 4, 2, predictor="reverse_diffusion")
        tiny = pc_sample(net, VE, SamplerConfig("pc", steps=50, snr=1e-12), 200, 4)
        off = pc_sample(net, VE, SamplerConfig("pc", steps=50, snr=0.0), 200, 4)
        np.testing.assert_array_equal(off, pred)
        np.testing.assert_allclose(tiny, pred, atol=1e-9)

    def test_corrector_helps_coarse_ve(self):
        gm = ring_mixture()
        net = ExactScore(gm, VE)
        em, pc = [], []
        for seed in range(3):
            ref = gm.sample(2000, 100 + seed)
            em.append(sample_quality(reverse_sde_em(net, VE, SamplerConfig("em", steps=5), 2000, seed), ref))
            pc.append(sample_quality(pc_sample(net, VE, SamplerConfig("pc", steps=5), 2000, seed), ref))
        assert np.median(pc) <= np.median(em)

    def test_zero_score_skips_corrector(self):
        zero = LinearScore(lambda t: 0.0)
        x = pc_sample(zero, VE, SamplerConfig("pc", steps=3), 10, 0)
        assert np.all(np.isfinite(x))

    def test_nan_reports_step(self):
        bad = lambda x, t: np.full_like(x, np.nan)
        with pytest.raises(NumericalError) as info:
            reverse_sde_em(bad, VP, SamplerConfig("em", steps=5), 4, 0)
        assert info.value.step == 1


class TestOde:
    def test_round_trip(self):
        gm = ring_mixture()
        net = ExactScore(gm, VP)
        x0 = gm.sample(100, 5)
        cfg = SamplerConfig("ode", steps=1000)
        xT = ode_flow(net, VP, cfg, x=x0, direction="forward")
        back = ode_flow(net, VP, cfg, x=xT, direction="backward")
        assert np.max(np.abs(back - x0)) < 1e-3

    def test_rk4_order(self):
        gm = ring_mixture()
        net = ExactScore(gm, VP)
        x = gm.sample(50, 6)
        outs = [ode_flow(net, VP, SamplerConfig("ode", steps=s, t_start=1.0, t_end=0.05), x=x, direction="forward")
                for s in (20, 40, 80, 160)]
        errs = [np.max(np.abs(a - b)) for a, b in zip(outs[:-1], outs[1:])]
        orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
        assert min(orders) >= 3.5

    def test_rk4_exact_on_cubic(self):
        ts = np.linspace(0, 1, 5)
        y = rk4_integrate(lambda y, t: 3 * t ** 2 * np.ones_like(y), np.zeros(2), ts)
        np.testing.assert_allclose(y, 1.0, rtol=1e-14)

    def test_underflow(self):
        with pytest.raises(NumericalError):
            rk4_integrate(lambda y, t: y, np.ones(1), np.array([0.5, 0.5]))

    def test_forward_needs_points(self):
        with pytest.raises(ContractError):
            ode_flow(STANDARD, VP, SamplerConfig("ode"), direction="forward")

    def test_ode_and_pc_comparable(self):
        from softtrunc.likelihood import energy_null_threshold
        gm = ring_mixture()
        net = ExactScore(gm, VE)
        ref = gm.sample(2000, 7)
        a = ode_flow(net, VE, SamplerConfig("ode", steps=200), 2000, 8)
        b = pc_sample(net, VE, SamplerConfig("pc", steps=200), 2000, 8)
        ea, eb = sample_quality(a, ref), sample_quality(b, ref)
        null = energy_null_threshold(a, ref, rng=9)
        assert max(ea, eb) <= 2 * min(ea, eb) + null


class TestRegenerate:
    @pytest.mark.parametrize("spec", [VP, VE], ids=["VP", "VE"])
    def test_affine_oracle(self, spec):
        m, s2 = np.array([1.0, -2.0]), 0.25
        gm = GaussianMixture.single(m, math.sqrt(s2))
        net = ExactScore(gm, spec)
        x0 = gm.sample(20, 10)
        tau = 0.3
        recon, orig = regenerate_from_tau(net, spec, x0, tau, 1000, np.random.default_rng(11))
        z = np.random.default_rng(11).standard_normal(x0.shape)
        xt = float(spec.mean_coeff(tau)) * x0 + float(spec.std(tau)) * z
        v = lambda t: float(spec.mean_coeff(t)) ** 2 * s2 + float(spec.var(t))
        mu_t, mu_e = float(spec.mean_coeff(tau)), float(spec.mean_coeff(spec.eps))
        oracle = mu_e * m + math.sqrt(v(spec.eps) / v(tau)) * (xt - mu_t * m)
        np.testing.assert_array_equal(orig, x0)
        assert np.max(np.abs(recon - oracle)) < 1e-4

    def test_vanishing_perturbation(self):
        gm = ring_mixture()
        x0 = gm.sample(200, 12)
        recon, _ = regenerate_from_tau(ExactScore(gm, VP), VP, x0, 2e-5, 50, 13)
        assert np.mean(np.linalg.norm(recon - x0, axis=1)) < 1e-2

    def test_error_grows_with_tau(self):
        gm = ring_mixture()
        net = ExactScore(gm, VP)
        x0 = gm.sample(300, 14)
        errs = [np.median(np.linalg.norm(regenerate_from_tau(net, VP, x0, tau, 200, 15)[0] - x0, axis=1))
                for tau in (0.05, 0.2, 0.5, 0.8)]
        assert all(a <= b for a, b in zip(errs[:-1], errs[1:]))

    def test_tau_bounds(self):
        with pytest.raises(ContractError):
            regenerate_from_tau(STANDARD, VP, np.zeros((1, 2)), VP.eps, 10, 0)
