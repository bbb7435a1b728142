"""Likelihood evaluation along the probability-flow ODE, NELBO reports and sample quality."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractError, NumericalError
from .losses import truncated_bound
from .samplers import _check_finite, time_grid

MODES = ("after_correction", "before_correction")


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _fd_divergence(score, x, t, h=1e-5):
    """Central-difference trace of the score Jacobian (2 d evaluations)."""
    n, d = x.shape
    tt = np.full(n, t)
    out = np.zeros(n)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out += (score(x + e, tt)[:, j] - score(x - e, tt)[:, j]) / (2 * h)
    return out


def score_divergence(score, x, t, method="auto", probes=None):
    """div_x s(x, t) at scalar t.

    ``auto`` uses an exact ``divergence`` method when the model has one and falls back
    to central differences; ``hutchinson`` needs Rademacher ``probes`` of x's shape.
    """
    if method == "auto":
        method = "exact" if hasattr(score, "divergence") else "fd"
    if method == "exact":
        return score.divergence(x, np.full(x.shape[0], t))
    if method == "fd":
        return _fd_divergence(score, x, t)
    if method == "hutchinson":
        if probes is None:
            raise ContractError("hutchinson divergence needs probe vectors")
        h = 1e-5
        tt = np.full(x.shape[0], t)
        jv = (score(x + h * probes, tt) - score(x - h * probes, tt)) / (2 * h)
        return np.sum(jv * probes, axis=1)
    raise ContractError(f"unknown divergence method {method!r}")


def ode_nll(net, spec, x, mode="after_correction", rk_steps=1000, rng=None, divergence="auto",
            terminal=None, grid="auto"):
    """Negative log-likelihood per point, in nats per dim, by the instantaneous change of variables.

    The augmented state (x, log-det) is integrated with RK4 from eps to T along
    dx/dt = f - g^2 s / 2, d(logdet)/dt = div f - g^2 div s / 2.  ``after_correction``
    first perturbs x to x_eps = mu(eps) x + sigma(eps) z and so evaluates
    log p_eps(x_eps); ``before_correction`` feeds x as it is.  ``terminal`` is an
    optional log-density replacing the SDE prior at T.
    """
    if mode not in MODES:
        raise ContractError(f"unknown mode {mode!r}")
    if rk_steps < 10:
        raise ContractError("rk_steps must be >= 10")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite input points")
    rng = _rng(rng)
    n, d = x.shape
    if mode == "after_correction":
        x = float(spec.mean_coeff(spec.eps)) * x + float(spec.std(spec.eps)) * rng.standard_normal(x.shape)
    probes = rng.choice([-1.0, 1.0], size=x.shape) if divergence == "hutchinson" else None

    fused = divergence in ("auto", "exact") and hasattr(net, "score_and_divergence")

    def rhs(state, t):
        y = state[:, :d]
        g2 = float(spec.g2(t))
        tt = np.full(n, t)
        if fused:
            s, ds = net.score_and_divergence(y, tt)
        else:
            s, ds = net(y, tt), score_divergence(net, y, t, divergence, probes)
        v = spec.drift(y, t) - 0.5 * g2 * s
        div = float(spec.div_drift(t, d)) - 0.5 * g2 * ds
        return np.concatenate([v, div[:, None]], axis=1)

    ts = time_grid(spec, spec.eps, spec.T, rk_steps, grid)
    state = np.concatenate([x, np.zeros((n, 1))], axis=1)
    for i in range(rk_steps):
        t, h = ts[i], ts[i + 1] - ts[i]
        k1 = rhs(state, t)
        k2 = rhs(state + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(state + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(state + h * k3, t + h)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(state, i + 1)
    xT, logdet = state[:, :d], state[:, d]
    log_pi = terminal(xT) if terminal is not None else spec.prior_logpdf(xT)
    return -(log_pi + logdet) / d


def reconstruction_term(gm, spec, n, rng, eps=None):
    """-E log p(x_0 | x_eps) per dim with p(x_0 | x_eps) = N(x_eps / mu, sigma^2 / mu^2 I).

    Since x_0 - x_eps / mu = -sigma z / mu, each draw contributes
    (1/2) log(2 pi sigma^2 / mu^2) + |z|^2 / (2 d).  Returns (mean, std_error).
    """
    eps = spec.eps if eps is None else eps
    if eps <= 0:
        raise ContractError("reconstruction needs eps > 0")
    rng = _rng(rng)
    mu, sig2 = float(spec.mean_coeff(eps)), float(spec.var(eps))
    x0 = gm.sample(n, rng)
    z = rng.standard_normal(x0.shape)
    x_eps = mu * x0 + math.sqrt(sig2) * z
    r = x0 - x_eps / mu
    d = gm.d
    vals = 0.5 * math.log(2 * math.pi * sig2 / mu ** 2) + 0.5 * np.sum(r * r, axis=1) * mu ** 2 / sig2 / d
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def reconstruction_expectation(spec, eps=None):
    """Closed-form expectation of the reconstruction term per dim."""
    eps = spec.eps if eps is None else eps
    mu, sig2 = float(spec.mean_coeff(eps)), float(spec.var(eps))
    return 0.5 * math.log(2 * math.pi * sig2 / mu ** 2) + 0.5


def nelbo_eval(net, gm, spec, n, include_recon=True, rng=None, terminal=None):
    """Truncated bound at eps with constants, optionally plus the reconstruction term (nats/dim)."""
    if n < 100:
        raise ContractError("nelbo_eval needs n >= 100")
    rng = _rng(rng)
    b = truncated_bound(net, gm, spec, spec.eps, n, rng, include_constants=True, terminal=terminal)
    recon, recon_se = reconstruction_term(gm, spec, min(n, 100_000), rng)
    nelbo = b.value + (recon if include_recon else 0.0)
    return {
        "nelbo": nelbo,
        "nelbo_no_recon": b.value,
        "recon_term": recon,
        "nelbo_std_error": math.hypot(b.std_error, recon_se if include_recon else 0.0),
        "bound": b,
    }


def _pair_mean(a, b, chunk=2000, same=False):
    total = 0.0
    for i in range(0, a.shape[0], chunk):
        total += float(cdist(a[i:i + chunk], b).sum())
    if same:
        m = a.shape[0]
        return total / (m * (m - 1))
    return total / (a.shape[0] * b.shape[0])


def sample_quality(model_samples, oracle_samples):
    """Energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| with U-statistics for the within-set terms."""
    x = np.atleast_2d(np.asarray(model_samples, dtype=float))
    y = np.atleast_2d(np.asarray(oracle_samples, dtype=float))
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ContractError("energy distance needs at least two samples per set")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NumericalError("non-finite samples")
    return 2 * _pair_mean(x, y) - _pair_mean(x, x, same=True) - _pair_mean(y, y, same=True)


def energy_null_threshold(x, y, q=0.99, n_perm=200, rng=None):
    """q-quantile of the energy distance under random relabelling of the pooled samples."""
    rng = _rng(rng)
    pooled = np.concatenate([np.atleast_2d(x), np.atleast_2d(y)])
    m, N = len(x), len(pooled)
    D = cdist(pooled, pooled)
    total = D.sum()
    k = N - m
    stats = np.empty(n_perm)
    for i in range(n_perm):
        mask = np.zeros(N)
        mask[rng.permutation(N)[:m]] = 1.0
        Saa = mask @ D @ mask
        Sbb = (1 - mask) @ D @ (1 - mask)
        Sab = 0.5 * (total - Saa - Sbb)
        stats[i] = 2 * Sab / (m * k) - Saa / (m * (m - 1)) - Sbb / (k * (k - 1))
    return float(np.quantile(stats, q))


@dataclass
class EvalReport:
    nll: float
    nelbo: float
    nelbo_no_recon: float
    recon_term: float
    mode: str
    sample_quality: float | None
    n: int
    seed: int | None
    config_hash: str
    nll_no_recon: float | None = None
    nll_std_error: float | None = None
    nelbo_std_error: float | None = None
    recon_mode: str = "gaussian_inversion"
    units: str = "nats/dim"
    modes: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


_NUM = {"type": "number"}
EVAL_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["nll", "nelbo", "nelbo_no_recon", "recon_term", "mode", "sample_quality", "n", "seed",
                 "config_hash", "recon_mode", "units"],
    "properties": {
        "nll": _NUM,
        "nelbo": _NUM,
        "nelbo_no_recon": _NUM,
        "recon_term": _NUM,
        "nll_no_recon": {"type": ["number", "null"]},
        "nll_std_error": {"type": ["number", "null"]},
        "nelbo_std_error": {"type": ["number", "null"]},
        "mode": {"enum": list(MODES)},
        "sample_quality": {"type": ["number", "null"]},
        "n": {"type": "integer", "minimum": 1},
        "seed": {"type": ["integer", "null"]},
        "config_hash": {"type": "string"},
        "recon_mode": {"const": "gaussian_inversion"},
        "units": {"const": "nats/dim"},
        "modes": {"type": "object"},
    },
}
