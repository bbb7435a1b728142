"""Linear diffusion SDEs with Gaussian transition kernels.

Three families are supported:

* ``VP``  -- dx = -1/2 beta(t) x dt + sqrt(beta(t)) dw, beta linear in t.
* ``VE``  -- dx = g(t) dw with sigma^2(t) = sigma_min^2 [(sigma_max/sigma_min)^(2t) - 1].
* ``RVE`` -- reciprocal VE, sigma^2(t) = sigma_max^2 (sigma_min/sigma_max)^(2 eps / t).

Every kernel is p_0t(x_t | x_0) = N(mu(t) x_0, sigma^2(t) I).  All functions accept
scalar or array times and broadcast elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .errors import DomainError, SingularKernelError

KINDS = ("VP", "VE", "RVE")


@dataclass(frozen=True)
class SdeSpec:
    """Parameters of one linear SDE.

    Only the fields relevant to ``kind`` are used: ``beta_min``/``beta_max`` for VP,
    ``sigma_min``/``sigma_max`` for VE and RVE.  ``eps`` is the truncation time and
    ``T`` the horizon.
    """

    kind: str = "VP"
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    eps: float = 1e-5
    T: float = 1.0

    def __post_init__(self):
        kind = str(self.kind).upper()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise DomainError(f"unknown SDE kind {self.kind!r}; expected one of {KINDS}")
        if not 0 < self.eps < self.T:
            raise DomainError(f"need 0 < eps < T, got eps={self.eps}, T={self.T}")
        if kind == "VP" and not 0 <= self.beta_min < self.beta_max:
            raise DomainError("VP needs 0 <= beta_min < beta_max")
        if kind != "VP" and not 0 < self.sigma_min < self.sigma_max:
            raise DomainError(f"{kind} needs 0 < sigma_min < sigma_max")

    # -- constructors --------------------------------------------------------

    @classmethod
    def vp(cls, beta_min=0.1, beta_max=20.0, eps=1e-5, T=1.0):
        return cls("VP", beta_min=beta_min, beta_max=beta_max, eps=eps, T=T)

    @classmethod
    def ve(cls, sigma_min=0.01, sigma_max=50.0, eps=1e-5, T=1.0):
        return cls("VE", sigma_min=sigma_min, sigma_max=sigma_max, eps=eps, T=T)

    @classmethod
    def rve(cls, sigma_min=0.01, sigma_max=50.0, eps=1e-5, T=1.0):
        return cls("RVE", sigma_min=sigma_min, sigma_max=sigma_max, eps=eps, T=T)

    def with_eps(self, eps):
        return replace(self, eps=eps)

    # -- helpers --------------------------------------------------------------

    @property
    def log_ratio(self):
        """ln(sigma_max / sigma_min)."""
        return math.log(self.sigma_max / self.sigma_min)

    def _check(self, t):
        if isinstance(t, float):
            if not 0.0 <= t <= self.T:
                raise DomainError(f"time {t} outside [0, {self.T}]")
            return np.float64(t)
        t = np.asarray(t, dtype=float)
        if t.size and not (t.min() >= 0 and t.max() <= self.T):
            raise DomainError(f"time outside [0, {self.T}]")
        return t

    # -- coefficients ---------------------------------------------------------

    def beta(self, t):
        """Instantaneous VP rate beta(t); zero for the VE family."""
        t = np.asarray(t, dtype=float)
        if self.kind != "VP":
            return np.zeros_like(t)
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def int_beta(self, t):
        """B(t) = integral of beta over [0, t]."""
        t = np.asarray(t, dtype=float)
        if self.kind != "VP":
            return np.zeros_like(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def g2(self, t):
        """Squared diffusion coefficient g^2(t)."""
        t = self._check(t)
        if self.kind == "VP":
            return self.beta(t)
        L = self.log_ratio
        if self.kind == "VE":
            return self.sigma_min ** 2 * np.exp(2 * t * L) * 2 * L
        with np.errstate(divide="ignore", invalid="ignore"):
            a = 2 * self.eps * L
            out = self.sigma_max ** 2 * np.exp(-a / t) * a / t ** 2
        return np.where(t > 0, out, 0.0)

    def dg2(self, t):
        """Time derivative of g^2(t)."""
        t = self._check(t)
        if self.kind == "VP":
            return np.full_like(t, self.beta_max - self.beta_min)
        L = self.log_ratio
        if self.kind == "VE":
            return self.g2(t) * 2 * L
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.g2(t) * (2 * self.eps * L / t ** 2 - 2 / t)
        return np.where(t > 0, out, 0.0)

    def diffusion(self, t):
        return np.sqrt(self.g2(t))

    def mean_coeff(self, t):
        """mu(t)."""
        t = self._check(t)
        if self.kind == "VP":
            return np.exp(-0.5 * self.int_beta(t))
        return np.ones_like(t)

    def var(self, t):
        """sigma^2(t), computed without cancellation for small t."""
        t = self._check(t)
        if self.kind == "VP":
            return -np.expm1(-self.int_beta(t))
        L = self.log_ratio
        if self.kind == "VE":
            return self.sigma_min ** 2 * np.expm1(2 * t * L)
        with np.errstate(divide="ignore"):
            out = self.sigma_max ** 2 * np.exp(-2 * self.eps * L / t)
        return np.where(t > 0, out, 0.0)

    def std(self, t):
        return np.sqrt(self.var(t))

    def dvar(self, t):
        """d sigma^2 / dt."""
        t = self._check(t)
        if self.kind == "VP":
            return self.beta(t) * np.exp(-self.int_beta(t))
        return self.g2(t)

    def drift(self, x, t):
        """f(x, t); ``t`` broadcasts against the leading axis of ``x``."""
        x = np.asarray(x, dtype=float)
        t = self._check(t)
        if self.kind != "VP":
            return np.zeros_like(x)
        b = self.beta(t)
        if b.ndim:
            b = b.reshape(b.shape + (1,) * (x.ndim - b.ndim))
        return -0.5 * b * x

    def div_drift(self, t, d):
        """Divergence of f, which is state independent for these SDEs."""
        t = self._check(t)
        return -0.5 * self.beta(t) * d

    def iw_antiderivative(self, t):
        """An antiderivative G(t) of g^2(t) / sigma^2(t).

        VP: ln(e^B(t) - 1);  VE: ln(r^(2t) - 1);  RVE: -2 eps ln(r) / t.
        """
        t = self._check(t)
        with np.errstate(divide="ignore"):
            if self.kind == "VP":
                return np.log(np.expm1(self.int_beta(t)))
            if self.kind == "VE":
                return np.log(np.expm1(2 * t * self.log_ratio))
            return -2 * self.eps * self.log_ratio / t

    def iw_inverse_antiderivative(self, y):
        """Solve G(t) = y for t (closed form for all three kinds)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "VP":
            b = np.logaddexp(0.0, y)
            slope = self.beta_max - self.beta_min
            return 2 * b / (self.beta_min + np.sqrt(self.beta_min ** 2 + 2 * slope * b))
        if self.kind == "VE":
            return np.logaddexp(0.0, y) / (2 * self.log_ratio)
        return -2 * self.eps * self.log_ratio / y

    # -- terminal prior -------------------------------------------------------

    @property
    def prior_var(self):
        """Variance of the terminal prior pi: 1 for VP, sigma^2(T) otherwise."""
        if self.kind == "VP":
            return 1.0
        return float(self.var(self.T))

    def prior_logpdf(self, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        v = self.prior_var
        return -0.5 * d * math.log(2 * math.pi * v) - 0.5 * np.sum(x * x, axis=-1) / v

    def prior_sample(self, n, d, rng):
        return rng.standard_normal((n, d)) * math.sqrt(self.prior_var)


def drift_diffusion(spec, x, t):
    """Return (f(x, t), g(t))."""
    return spec.drift(x, t), spec.diffusion(t)


def transition(spec, t):
    """Return (mu(t), sigma(t))."""
    return spec.mean_coeff(t), spec.std(t)


def perturb_sample(spec, x0, t, z):
    """Draw x_t = mu(t) x_0 + sigma(t) z and the denoising target -z / sigma(t).

    ``t`` is a scalar or one time per row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    z = np.asarray(z, dtype=float)
    mu, sigma = transition(spec, t)
    if np.any(sigma <= 0):
        raise SingularKernelError("sigma(t) = 0: the score target is undefined at t = 0")
    if np.ndim(mu):
        mu = mu.reshape(mu.shape + (1,) * (x0.ndim - mu.ndim))
        sigma = sigma.reshape(mu.shape)
    xt = mu * x0 + sigma * z
    return xt, -z / sigma


def _rk4_variance(spec, grid, h=1e-4):
    """Integrate dS/dt = -beta S + g^2, S(0) = 0 with fixed-step RK4 up to each grid time."""

    def rhs(t, s):
        return -float(spec.beta(t)) * s + float(spec.g2(t))

    out = np.empty(len(grid))
    order = np.argsort(grid)
    t, s = 0.0, 0.0
    for i in order:
        target = float(grid[i])
        n = max(1, math.ceil((target - t) / h - 1e-9))
        step = (target - t) / n
        for _ in range(n):
            k1 = rhs(t, s)
            k2 = rhs(t + step / 2, s + step / 2 * k1)
            k3 = rhs(t + step / 2, s + step / 2 * k2)
            k4 = rhs(t + step, s + step * k3)
            s += step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += step
        t = target
        out[i] = s
    return out


def kernel_consistency_check(spec, grid):
    """Max relative error between sigma^2(t) and an independent reconstruction.

    VE/RVE: sigma^2(t) = int_0^t g^2 by adaptive quadrature.  VP: the covariance ODE
    dSigma/dt = -beta Sigma + g^2 solved by RK4 with step 1e-4 (the drift rules out
    plain quadrature of g^2).
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid > spec.T):
        raise DomainError("grid must lie in (0, T]")
    exact = spec.var(grid)
    if spec.kind == "VP":
        recon = _rk4_variance(spec, grid)
    else:
        recon = np.array(
            [
                integrate.quad(lambda s: float(spec.g2(s)), 0.0, t, epsabs=0.0, epsrel=1e-12, limit=200)[0]
                for t in grid
            ]
        )
    return float(np.max(np.abs(recon - exact) / exact))
