"""Time weightings, the importance distribution over diffusion time, and truncation priors.

The truncation prior P_k(tau) is proportional to tau^(-k) on [eps, T].  Its CDF and
inverse CDF are evaluated in log space so that large exponents do not overflow.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractError, DomainError


def _bisect_ppf(cdf, lo, hi, u, tol=1e-12, max_iter=200):
    """Vectorised bisection for cdf(t) = u on [lo, hi]."""
    u = np.asarray(u, dtype=float)
    a = np.full(u.shape, float(lo))
    b = np.full(u.shape, float(hi))
    for _ in range(max_iter):
        if np.all(b - a <= tol):
            break
        m = 0.5 * (a + b)
        below = cdf(m) < u
        a = np.where(below, m, a)
        b = np.where(below, b, m)
    return 0.5 * (a + b)


class TruncationPrior:
    """Power-law prior P_k(tau) = tau^(-k) / Z_k on [eps, T].

    ``k = inf`` gives the point mass at eps, which recovers ordinary training with a
    fixed truncation time.
    """

    def __init__(self, k, eps=1e-5, T=1.0):
        if not 0 < eps < T:
            raise DomainError("need 0 < eps < T")
        if not k >= 0:
            raise DomainError("prior exponent k must be >= 0")
        self.k = float(k)
        self.eps = float(eps)
        self.T = float(T)
        self._LT = math.log(T / eps)
        self._c = 1.0 - self.k
        if self.is_delta:
            self.log_Z = -math.inf
        elif abs(self._c) < 1e-12:
            self.log_Z = math.log(self._LT)
        else:
            # Z = (eps^c)(expm1(c L_T)) / c, always positive.
            self.log_Z = self._c * math.log(eps) + math.log(math.expm1(self._c * self._LT) / self._c)

    @classmethod
    def delta(cls, eps=1e-5, T=1.0):
        return cls(math.inf, eps, T)

    @property
    def is_delta(self):
        return math.isinf(self.k)

    @property
    def Z(self):
        return math.exp(self.log_Z)

    def __repr__(self):
        return f"TruncationPrior(k={self.k}, eps={self.eps}, T={self.T})"

    def _is_log(self):
        return abs(self._c) < 1e-12

    def pdf(self, tau):
        """Density on [eps, T]; the delta prior has no density and returns zeros."""
        tau = np.asarray(tau, dtype=float)
        inside = (tau >= self.eps) & (tau <= self.T)
        if self.is_delta:
            return np.zeros_like(tau)
        with np.errstate(divide="ignore"):
            logp = -self.k * np.log(np.where(inside, tau, 1.0)) - self.log_Z
        return np.where(inside, np.exp(logp), 0.0)

    def cdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.is_delta:
            return np.where(tau >= self.eps, 1.0, 0.0)
        s = np.log(np.clip(tau, self.eps, self.T) / self.eps)
        if self._is_log():
            out = s / self._LT
        else:
            out = np.expm1(self._c * s) / math.expm1(self._c * self._LT)
        return np.where(tau < self.eps, 0.0, np.where(tau >= self.T, 1.0, out))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.is_delta:
            return np.full_like(u, self.eps)
        if self._is_log():
            s = u * self._LT
        else:
            s = np.log1p(u * math.expm1(self._c * self._LT)) / self._c
        return np.clip(self.eps * np.exp(s), self.eps, self.T)

    def sample(self, rng, size=None):
        return self.ppf(rng.random(size))


class ImportanceDist:
    """Time density proportional to g^2(t) / sigma^2(t) on [tau, T].

    Uses the closed-form antiderivative G of ``spec.iw_antiderivative``, so the CDF is
    (G(t) - G(tau)) / Z_tau and the inverse CDF is G^-1(G(tau) + u Z_tau).
    """

    def __init__(self, spec, tau=None):
        tau = spec.eps if tau is None else float(tau)
        if not 0 < tau < spec.T:
            raise DomainError(f"importance distribution needs 0 < tau < T, got tau={tau}")
        self.spec = spec
        self.tau = tau
        self._G0 = float(spec.iw_antiderivative(tau))
        self.Z_tau = float(spec.iw_antiderivative(spec.T)) - self._G0

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.tau) & (t <= self.spec.T)
        tc = np.clip(t, self.tau, self.spec.T)
        return np.where(inside, self.spec.g2(tc) / self.spec.var(tc) / self.Z_tau, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, self.tau, self.spec.T)
        out = (self.spec.iw_antiderivative(tc) - self._G0) / self.Z_tau
        return np.clip(out, 0.0, 1.0)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        t = self.spec.iw_inverse_antiderivative(self._G0 + u * self.Z_tau)
        return np.clip(t, self.tau, self.spec.T)

    def ppf_bisect(self, u, tol=1e-12):
        """Inverse CDF by bisection; a generic fallback and cross-check for ``ppf``."""
        return _bisect_ppf(self.cdf, self.tau, self.spec.T, u, tol=tol)

    def sample(self, rng, size=None):
        return self.ppf(rng.random(size))


def prior_sample(prior, u):
    """tau = CDF^-1(u) for a truncation prior."""
    return prior.ppf(u)


def iw_sample(dist, u):
    """t = CDF^-1(u) for an importance distribution."""
    return dist.ppf(u)


def iw_quantiles(dist, probs):
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(probs > 1):
        raise DomainError("probabilities must lie in [0, 1]")
    return dist.ppf(probs)


def general_weight_eval(prior, spec, t):
    """g^2_P(t) = P(tau <= t) g^2(t); zero below eps."""
    return prior.cdf(t) * spec.g2(t)


class WeightingFn:
    """A time weighting lambda(t).

    kinds: ``likelihood`` (g^2), ``variance`` (sigma^2) and ``general`` (g^2_P, which
    needs ``prior``).
    """

    KINDS = ("likelihood", "variance", "general")

    def __init__(self, kind="likelihood", prior=None):
        if kind == "general_from_prior":
            kind = "general"
        if kind not in self.KINDS:
            raise DomainError(f"unknown weighting {kind!r}")
        if kind == "general" and prior is None:
            raise ContractError("general weighting needs a truncation prior")
        self.kind = kind
        self.prior = prior

    def __repr__(self):
        return f"WeightingFn({self.kind!r}, prior={self.prior!r})"

    def lam(self, spec, t):
        if self.kind == "likelihood":
            return spec.g2(t)
        if self.kind == "variance":
            return spec.var(t)
        return general_weight_eval(self.prior, spec, t)

    def ratio(self, spec, t):
        """lambda(t) / g^2(t)."""
        if self.kind == "likelihood":
            return np.ones_like(np.asarray(t, dtype=float))
        if self.kind == "variance":
            return spec.var(t) / spec.g2(t)
        return self.prior.cdf(t)

    def ratio_derivative(self, spec, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "likelihood":
            return np.zeros_like(t)
        if self.kind == "variance":
            g2 = spec.g2(t)
            return (spec.dvar(t) * g2 - spec.var(t) * spec.dg2(t)) / g2 ** 2
        return self.prior.pdf(t)


class PriorFromWeight(NamedTuple):
    atom: float
    density: Callable
    Z: float


def prior_from_weight(ratio, eps, T, derivative=None, grid_size=2001):
    """Truncation distribution induced by a weight with nondecreasing ratio r = lambda/g^2.

    Returns the point mass at eps, the density on (eps, T] and the normaliser Z = r(T).
    ``derivative`` is r' when known; otherwise central differences with step
    min(1e-6 (T - eps), 1e-3 t), so the step stays well below t close to eps.  Raises
    ContractError if r decreases on a log-spaced probe grid or is negative.
    """
    ratio_fn = ratio
    grid = np.geomspace(eps, T, grid_size)
    r = np.asarray(ratio_fn(grid), dtype=float)
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ContractError("lambda / g^2 must be finite and nonnegative on [eps, T]")
    drop = np.diff(r)
    if np.any(drop < -1e-12 * max(1.0, float(np.max(np.abs(r))))):
        i = int(np.argmin(drop))
        raise ContractError(f"lambda / g^2 decreases near t = {grid[i]:.4g}; no induced prior exists")
    Z = float(r[-1])
    if Z <= 0:
        raise ContractError("lambda / g^2 vanishes at T")

    if derivative is None:
        def derivative(t):
            t = np.asarray(t, dtype=float)
            h = np.minimum(1e-6 * (T - eps), 1e-3 * t)
            lo = np.maximum(t - h, eps)
            hi = np.minimum(t + h, T)
            return (ratio_fn(hi) - ratio_fn(lo)) / (hi - lo)

    def density(t):
        t = np.asarray(t, dtype=float)
        inside = (t >= eps) & (t <= T)
        return np.where(inside, derivative(np.clip(t, eps, T)) / Z, 0.0)

    atom = float(np.asarray(ratio_fn(np.array(eps)))) / Z
    return PriorFromWeight(atom, density, Z)


def weight_prior(weighting, spec, analytic=True):
    """prior_from_weight for a known WeightingFn on ``spec``."""
    deriv = (lambda t: weighting.ratio_derivative(spec, t)) if analytic else None
    return prior_from_weight(lambda t: weighting.ratio(spec, t), spec.eps, spec.T, derivative=deriv)
