"""Monte-Carlo estimators of denoising losses and of the truncated variational bound.

A "score model" is any callable ``score(x, t)`` taking points of shape (n, d) and one
time per point; ScoreNet, ExactScore and LinearScore all qualify.

Per-sample time weights follow importance sampling: with t drawn from a proposal q,
a weight lambda(t) enters as lambda(t) / q(t).  For the importance distribution
q = g^2 / (sigma^2 Z_tau) and lambda = F g^2 (F = lambda / g^2) this is Z_tau F(t) sigma^2(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError
from .sde import perturb_sample
from .weighting import ImportanceDist, TruncationPrior, WeightingFn


@dataclass
class LossResult:
    value: float
    std_error: float
    per_sample: np.ndarray
    t: np.ndarray
    tau: float


@dataclass
class BoundEstimate:
    """Truncated bound in nats per dimension.

    ``parts`` holds ``score``, ``cross``, ``divergence`` and ``prior``; ``constant`` is
    cross + divergence, the theta-free terms that ``include_constants`` toggles.
    """

    value: float
    std_error: float
    parts: dict
    tau: float
    n: int
    d: int
    include_constants: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def constant(self):
        return self.parts["cross"] + self.parts["divergence"]


def _check_tau(spec, tau):
    if not spec.eps <= tau < spec.T:
        raise DomainError(f"tau must lie in [eps, T), got {tau}")


def _draw(gm, spec, weighting, tau, n, rng, proposal=None):
    """Draw (t, z, x_t, target, w) where w = lambda(t) / q(t) for the chosen proposal."""
    if proposal is None:
        proposal = "uniform" if weighting.kind == "variance" else "iw"
    x0 = gm.sample(n, rng)
    u = rng.random(n)
    z = rng.standard_normal(x0.shape)
    if proposal == "iw":
        dist = ImportanceDist(spec, tau)
        t = dist.ppf(u)
        w = dist.Z_tau * spec.var(t) * weighting.ratio(spec, t)
    elif proposal == "uniform":
        t = tau + (spec.T - tau) * u
        w = (spec.T - tau) * weighting.lam(spec, t)
    else:
        raise DomainError(f"unknown time proposal {proposal!r}")
    xt, target = perturb_sample(spec, x0, t, z)
    return t, z, xt, target, w


def denoising_loss_iw(net, gm, spec, weighting=None, tau=None, batch_size=256, rng=None, proposal=None):
    """Importance-sampled weighted denoising loss on [tau, T] (total nats, not per dim).

    Estimates (1/2) int_tau^T lambda(t) E|s(x_t, t) + z / sigma(t)|^2 dt.
    """
    weighting = weighting or WeightingFn("likelihood")
    tau = spec.eps if tau is None else float(tau)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    _check_tau(spec, tau)
    t, z, xt, target, w = _draw(gm, spec, weighting, tau, batch_size, rng, proposal)
    r = net(xt, t) - target
    vals = 0.5 * w * np.sum(r * r, axis=1)
    se = float(np.std(vals, ddof=1) / math.sqrt(batch_size)) if batch_size > 1 else math.inf
    return LossResult(float(np.mean(vals)), se, vals, t, tau)


def soft_truncation_step(net, gm, spec, prior, batch_size, rng, weighting=None):
    """Draw one tau from the prior, then the weighted loss on [tau, T] and its gradient.

    Returns (loss, grads, tau).  The per-sample weight carries the Z_tau scale so the
    gradient is that of the importance-sampled estimate.
    """
    weighting = weighting or WeightingFn("likelihood")
    tau = float(prior.sample(rng))
    tau = min(tau, np.nextafter(spec.T, 0.0))
    t, z, xt, target, w = _draw(gm, spec, weighting, tau, batch_size, rng)
    loss, grads = net.backward_grad(xt, t, target, w)
    return loss, grads, tau


def soft_truncation_loss(net, gm, spec, prior, n_outer, n_inner, rng, weighting=None):
    """Average over ``n_outer`` prior draws of the loss on [tau, T] with ``n_inner`` samples.

    The standard error uses the spread of the per-tau estimates, which covers both the
    prior and the inner sampling noise.
    """
    vals = np.empty(n_outer)
    for i in range(n_outer):
        tau = float(prior.sample(rng))
        vals[i] = denoising_loss_iw(net, gm, spec, weighting, tau, n_inner, rng).value
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_outer))


def general_weight_loss(net, gm, spec, prior, n, rng):
    """Loss with the general weight g^2_P on [eps, T]; equals the soft-truncation loss in expectation."""
    return denoising_loss_iw(net, gm, spec, WeightingFn("general", prior), spec.eps, n, rng)


# -- constants ----------------------------------------------------------------


def cross_constant(spec, tau, d):
    """-(1/2) int_tau^T g^2 E|grad log p_0t|^2 dt = -(d/2) Z_tau (total nats)."""
    return -0.5 * d * ImportanceDist(spec, tau).Z_tau


def divergence_constant(spec, tau, d):
    """-int_tau^T div f dt = (d/2) int_tau^T beta (zero for the VE family)."""
    return 0.5 * d * float(spec.int_beta(spec.T) - spec.int_beta(tau))


def bound_constant(spec, tau, d):
    return cross_constant(spec, tau, d) + divergence_constant(spec, tau, d)


def general_weight_constant(spec, prior, d):
    """int_eps^T F_P(t) [-(d/2) g^2/sigma^2 + (d/2) beta] dt by quadrature in log time."""

    def f(s):
        t = math.exp(s)
        F = float(prior.cdf(t))
        return t * F * 0.5 * d * (float(spec.beta(t)) - float(spec.g2(t) / spec.var(t)))

    a, b = math.log(spec.eps), math.log(spec.T)
    val, _ = integrate.quad(f, a, b, limit=400, epsabs=1e-12, epsrel=1e-11)
    return val


def soft_truncation_constant(spec, prior, d):
    """E_{tau ~ P}[bound_constant(tau)], the same number as general_weight_constant."""
    if prior.is_delta:
        return bound_constant(spec, spec.eps, d)

    def f(s):
        tau = math.exp(s)
        return tau * float(prior.pdf(tau)) * bound_constant(spec, tau, d)

    val, _ = integrate.quad(f, math.log(spec.eps), math.log(spec.T), limit=400, epsabs=1e-12, epsrel=1e-11)
    return val


def terminal_cross_entropy(gm, spec, terminal=None, n=100_000, rng=None):
    """-E_{p_T}[log pi(x_T)] in total nats, with its standard error.

    ``terminal`` is None for the SDE's Gaussian prior (closed form) or ``"exact"`` for
    pi = p_T, in which case the value is the entropy of p_T (closed form for a single
    Gaussian, Monte Carlo otherwise).
    """
    if terminal is None:
        return gm.gaussian_cross_entropy(spec, spec.T, spec.prior_var), 0.0
    if terminal != "exact":
        raise DomainError(f"unknown terminal {terminal!r}")
    if gm.n_components == 1:
        v = float(gm.marginal_params(spec, spec.T)[1][0])
        return 0.5 * gm.d * (1.0 + math.log(2 * math.pi * v)), 0.0
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    x = gm.sample_marginal(spec, spec.T, n, rng)
    vals = -gm.logpdf(x, spec, spec.T)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def truncated_bound(net, gm, spec, tau=None, n=100_000, rng=None, include_constants=True,
                    terminal=None, chunk=200_000, estimator="paired"):
    """Monte-Carlo estimate of the truncated variational bound at ``tau`` in nats per dim.

    The bound is score + cross + divergence + prior, where

    * score      = (1/2) int g^2 E|s - grad log p_0t|^2,
    * cross      = -(1/2) int g^2 E|grad log p_0t|^2 = -(d/2) Z_tau,
    * divergence = -int div f,
    * prior      = -E_{p_T} log pi.

    With ``estimator="paired"`` the score term is estimated together with the cross term
    on the same draws, and the closed-form cross term is added back.  Both are unbiased;
    the paired form cancels the dominant |z|^2 noise near t = tau.  ``"plain"`` uses the
    score term alone.  Without ``include_constants`` the value drops cross + divergence.
    """
    tau = spec.eps if tau is None else float(tau)
    _check_tau(spec, tau)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    d = gm.d
    weighting = WeightingFn("likelihood")
    Z = ImportanceDist(spec, tau).Z_tau
    s1 = s2 = raw1 = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        t, z, xt, target, w = _draw(gm, spec, weighting, tau, m, rng)
        r = net(xt, t) - target
        score_vals = 0.5 * w * np.sum(r * r, axis=1)
        if estimator == "paired":
            vals = score_vals - 0.5 * Z * np.sum(z * z, axis=1) + 0.5 * d * Z
        elif estimator == "plain":
            vals = score_vals
        else:
            raise DomainError(f"unknown estimator {estimator!r}")
        s1 += float(np.sum(vals))
        s2 += float(np.sum(vals * vals))
        raw1 += float(np.sum(score_vals))
        done += m
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    se_score = math.sqrt(var / n)
    prior, se_prior = terminal_cross_entropy(gm, spec, terminal, rng=rng)
    parts = {
        "score": mean / d,
        "cross": cross_constant(spec, tau, d) / d,
        "divergence": divergence_constant(spec, tau, d) / d,
        "prior": prior / d,
    }
    value = parts["score"] + parts["prior"]
    if include_constants:
        value += parts["cross"] + parts["divergence"]
    se = math.hypot(se_score, se_prior) / d
    return BoundEstimate(value, se, parts, tau, n, d, include_constants,
                         extra={"score_plain": raw1 / n / d, "estimator": estimator})


def integrand_profile(net, gm, spec, grid, n=10_000, rng=None):
    """Per-time integrand of the truncated bound, -dL/dtau, in nats per dim.

    At each grid time t returns (t, value, std_error, score, cross, divergence, mismatch)
    where value = (1/2) E[g^2 |s - grad log p_0t|^2 - g^2 |grad log p_0t|^2 - 2 div f]
    is estimated from paired draws, and ``mismatch`` = (1/2) g^2 E|s - grad log p_t|^2
    uses the exact mixture score on the same points.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    d = gm.d
    rows = []
    for t in np.asarray(grid, dtype=float):
        if not spec.eps <= t <= spec.T:
            raise DomainError("grid must lie in [eps, T]")
        x0 = gm.sample(n, rng)
        z = rng.standard_normal(x0.shape)
        tt = np.full(n, t)
        xt, target = perturb_sample(spec, x0, tt, z)
        g2 = float(spec.g2(t))
        s = net(xt, tt)
        score = 0.5 * g2 * np.sum((s - target) ** 2, axis=1)
        cross = -0.5 * g2 * np.sum(target * target, axis=1)
        div = -float(spec.div_drift(t, d))
        tot = score + cross + div
        mism = 0.5 * g2 * np.sum((s - gm.score(xt, spec, tt)) ** 2, axis=1)
        rows.append((t, tot.mean() / d, tot.std(ddof=1) / math.sqrt(n) / d,
                     score.mean() / d, cross.mean() / d, div / d, mism.mean() / d))
    return np.array(rows)


PROFILE_COLUMNS = ("t", "value", "std_error", "score", "cross", "divergence", "mismatch")


def ddpm_ncsn_equivalence(net, spec, x0, t, z):
    """Weighted NCSN loss sigma^2 |s + z/sigma|^2 and DDPM loss |eps_theta - z|^2 on the same draws.

    eps_theta = -sigma s_theta.  Returns per-batch means (ncsn, ddpm).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (x0.shape[0],))
    xt, _ = perturb_sample(spec, x0, t, z)
    sig = spec.std(t)[:, None]
    s = net(xt, t)
    ncsn = sig[:, 0] ** 2 * np.sum((s + z / sig) ** 2, axis=1)
    eps_theta = -sig * s
    ddpm = np.sum((eps_theta - z) ** 2, axis=1)
    return float(np.mean(ncsn)), float(np.mean(ddpm))
