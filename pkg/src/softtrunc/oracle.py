"""Isotropic Gaussian mixtures as a data distribution with closed-form perturbed marginals.

Under a linear SDE with kernel N(mu(t) x0, sigma^2(t) I) a mixture with means m_k and
stds s_k stays a mixture, with means mu(t) m_k and variances mu(t)^2 s_k^2 + sigma(t)^2.
That makes scores, log-densities and entropies available exactly at every time.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class GaussianMixture:
    def __init__(self, weights, means, stds):
        self.weights = np.asarray(weights, dtype=float).ravel()
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.stds = np.broadcast_to(np.asarray(stds, dtype=float), self.weights.shape).copy()
        if self.means.shape[0] != self.weights.size:
            raise DomainError("one mean per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1")
        if np.any(self.stds <= 0):
            raise DomainError("component stds must be positive")

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    @classmethod
    def standard_normal(cls, d=2):
        return cls([1.0], np.zeros((1, d)), [1.0])

    @classmethod
    def single(cls, mean, std):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls([1.0], mean[None, :], [std])

    def mean(self):
        return self.weights @ self.means

    def marginal_params(self, spec, t):
        """(mu(t), component variances) with shapes broadcastable against samples.

        Scalar ``t`` gives ``mu`` scalar and ``var`` of shape (K,); a vector of n times
        gives ``mu`` of shape (n, 1) and ``var`` of shape (n, K).
        """
        mu = spec.mean_coeff(t)
        sig2 = spec.var(t)
        if np.ndim(t) == 0:
            return float(mu), mu ** 2 * self.stds ** 2 + sig2
        mu = np.asarray(mu)[:, None]
        return mu, mu ** 2 * self.stds[None, :] ** 2 + np.asarray(sig2)[:, None]

    def marginal(self, spec, t):
        """The perturbed mixture at a single scalar time."""
        mu, var = self.marginal_params(spec, float(t))
        return GaussianMixture(self.weights, mu * self.means, np.sqrt(var))

    def _components(self, x, spec, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mu, var = self.marginal_params(spec, t)
        if np.ndim(var) == 1:
            var = np.broadcast_to(var, (x.shape[0], var.size))
            mu = np.full((x.shape[0], 1), mu)
        diff = x[:, None, :] - mu[:, :, None] * self.means[None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        logc = logw - 0.5 * self.d * np.log(2 * math.pi * var) - 0.5 * sq / var
        return diff, var, logc

    def logpdf(self, x, spec, t):
        _, _, logc = self._components(x, spec, t)
        return logsumexp(logc, axis=1)

    def score(self, x, spec, t):
        diff, var, logc = self._components(x, spec, t)
        r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
        return -np.einsum("nk,nkd->nd", r / var, diff)

    def score_divergence(self, x, spec, t):
        """Trace of the score Jacobian: sum r_k |u_k|^2 - |s|^2 - d sum r_k / v_k."""
        diff, var, logc = self._components(x, spec, t)
        r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
        u = -diff / var[:, :, None]
        s = np.einsum("nk,nkd->nd", r, u)
        return (
            np.sum(r * np.sum(u * u, axis=-1), axis=1)
            - np.sum(s * s, axis=1)
            - self.d * np.sum(r / var, axis=1)
        )

    def sample(self, n, rng):
        rng = _as_rng(rng)
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.d))
        return self.means[comp] + self.stds[comp, None] * z

    def sample_marginal(self, spec, t, n, rng):
        rng = _as_rng(rng)
        x0 = self.sample(n, rng)
        z = rng.standard_normal(x0.shape)
        return float(spec.mean_coeff(t)) * x0 + float(spec.std(t)) * z

    def second_moment(self, spec, t):
        """E|x_t|^2 at scalar t."""
        mu, var = self.marginal_params(spec, float(t))
        return float(np.sum(self.weights * (mu ** 2 * np.sum(self.means ** 2, axis=1) + self.d * var)))

    def gaussian_cross_entropy(self, spec, t, prior_var):
        """-E_{p_t}[log N(x; 0, prior_var I)] in nats (total, not per dim)."""
        return 0.5 * self.d * math.log(2 * math.pi * prior_var) + 0.5 * self.second_moment(spec, t) / prior_var


def ring_mixture(components=8, radius=4.0, std=0.3, d=2):
    """Equal-weight mixture with means evenly spaced on a circle in the first two coordinates."""
    if d < 2:
        raise DomainError("ring mixture needs d >= 2")
    ang = 2 * math.pi * np.arange(components) / components
    means = np.zeros((components, d))
    means[:, 0] = radius * np.cos(ang)
    means[:, 1] = radius * np.sin(ang)
    return GaussianMixture(np.full(components, 1.0 / components), means, np.full(components, std))


class ExactScore:
    """Callable score model backed by the exact perturbed-mixture score."""

    exact = True

    def __init__(self, gm, spec):
        self.gm = gm
        self.spec = spec

    def __call__(self, x, t):
        return self.gm.score(x, self.spec, t)

    def divergence(self, x, t):
        return self.gm.score_divergence(x, self.spec, t)


def exact_score(gm, spec, x, t):
    return gm.score(x, spec, t)


def exact_logpdf(gm, spec, x, t):
    return gm.logpdf(x, spec, t)


def exact_nll(gm, spec, t, n, rng=0):
    """Monte-Carlo E[-log p_t(x_t)] / d and its standard error."""
    x = gm.sample_marginal(spec, t, n, rng)
    vals = -gm.logpdf(x, spec, t) / gm.d
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n))


def gaussian_kl(mean_a, var_a, mean_b, var_b, d):
    """KL(N(a, var_a I) || N(b, var_b I)) in nats."""
    if var_a <= 0 or var_b <= 0:
        raise DomainError("variances must be positive")
    diff = np.asarray(mean_a, dtype=float) - np.asarray(mean_b, dtype=float)
    sq = float(np.sum(diff * diff)) if diff.ndim else d * float(diff) ** 2
    return 0.5 * (d * var_a / var_b + sq / var_b - d + d * math.log(var_b / var_a))


def sample_data(gm, n, seed):
    if n <= 0:
        raise DomainError("n must be positive")
    return gm.sample(n, _as_rng(seed))
