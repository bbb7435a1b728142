"""Reverse-time samplers: Euler-Maruyama, predictor-corrector, and the probability-flow ODE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError

SAMPLERS = ("em", "pc", "ode")


def default_sampler(kind):
    return "em" if kind == "VP" else "pc"


def time_grid(spec, t_from, t_to, steps, grid="auto"):
    """``steps + 1`` times from ``t_from`` to ``t_to``.

    ``log`` spaces them geometrically, which RVE needs because its variance grows by
    orders of magnitude just above eps; ``auto`` picks ``log`` for RVE only.
    """
    if grid == "auto":
        grid = "log" if spec.kind == "RVE" else "uniform"
    if grid == "uniform":
        return np.linspace(t_from, t_to, steps + 1)
    if grid == "log":
        return np.geomspace(t_from, t_to, steps + 1)
    raise ContractError(f"unknown time grid {grid!r}")


@dataclass
class SamplerConfig:
    """Solver choice and integration interval; ``t_start``/``t_end`` default to T and eps."""

    kind: str = "em"
    steps: int = 1000
    snr: float = 0.16
    t_start: float | None = None
    t_end: float | None = None
    grid: str = "auto"

    def interval(self, spec):
        t0 = spec.T if self.t_start is None else float(self.t_start)
        t1 = spec.eps if self.t_end is None else float(self.t_end)
        if self.kind not in SAMPLERS:
            raise ContractError(f"unknown sampler {self.kind!r}")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if not spec.eps <= t1 < t0 <= spec.T:
            raise ContractError("need eps <= t_end < t_start <= T")
        return t0, t1


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite state at step {step}", step=step)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _reverse(net, spec, config, n, rng, d, x=None, corrector=False, predictor="em"):
    rng = _rng(rng)
    t0, t1 = config.interval(spec)
    # independent stream for the corrector so the predictor noise does not depend on snr
    crng = rng.spawn(1)[0]
    if x is None:
        x = spec.prior_sample(n, d, rng)
    x = np.array(x, dtype=float)
    n = x.shape[0]
    ts = time_grid(spec, t0, t1, config.steps, config.grid)
    for i in range(config.steps):
        t, t_next = ts[i], ts[i + 1]
        h = t - t_next
        tt = np.full(n, t)
        s = net(x, tt)
        if predictor == "em":
            g2 = float(spec.g2(t))
            x = x - (spec.drift(x, t) - g2 * s) * h + np.sqrt(g2 * h) * rng.standard_normal(x.shape)
        else:
            # reverse diffusion: discretise x_{i+1} = x_i + G_i z with G_i^2 = var(t) - var(t-h) (VE family),
            # or the VP ancestral analogue with the discrete beta.
            if spec.kind == "VP":
                g2h = float(spec.g2(t)) * h
                x = x - spec.drift(x, t) * h + g2h * s + np.sqrt(g2h) * rng.standard_normal(x.shape)
            else:
                G2 = float(spec.var(t) - spec.var(t_next))
                x = x + G2 * s + np.sqrt(G2) * rng.standard_normal(x.shape)
        _check_finite(x, i + 1)
        if corrector and config.snr > 0:
            x = _langevin(net, spec, x, t_next, config, h, crng)
            _check_finite(x, i + 1)
    return x


def _langevin(net, spec, x, t, config, h, rng):
    """One Langevin step with step size 2 alpha (snr |z| / |s|)^2.

    The norms are batch means of per-sample norms, so the step is one scalar per grid
    time.  Per-sample ratios blow up where the score vanishes (mode centers).  A zero
    mean score norm skips the corrector.
    """
    s = net(x, np.full(x.shape[0], t))
    z = rng.standard_normal(x.shape)
    s_norm = float(np.mean(np.linalg.norm(s, axis=1)))
    z_norm = float(np.mean(np.linalg.norm(z, axis=1)))
    if s_norm == 0.0:
        return x
    # discrete VP alpha over the step; equals 1 - beta h to first order and stays positive
    alpha = float(np.exp(-(spec.int_beta(t + h) - spec.int_beta(t)))) if spec.kind == "VP" else 1.0
    step = 2.0 * alpha * (config.snr * z_norm / s_norm) ** 2
    return x + step * s + np.sqrt(2.0 * step) * z


def reverse_sde_em(net, spec, config, n, rng, d=2, x=None):
    """Euler-Maruyama for dx = [f - g^2 s] dt + g dw run backward from t_start to t_end."""
    return _reverse(net, spec, config, n, rng, d, x=x, predictor="em")


def pc_sample(net, spec, config, n, rng, d=2, x=None):
    """Reverse-diffusion predictor followed by one Langevin corrector step per grid point."""
    return _reverse(net, spec, config, n, rng, d, x=x, corrector=True, predictor="reverse_diffusion")


def flow_velocity(net, spec, x, t):
    """Probability-flow drift f(x, t) - (1/2) g^2(t) s(x, t)."""
    tt = np.full(x.shape[0], t)
    return spec.drift(x, t) - 0.5 * float(spec.g2(t)) * net(x, tt)


def rk4_integrate(fun, y, ts):
    """Fixed-step RK4 for dy/dt = fun(y, t) through the times ``ts`` (either direction)."""
    for i in range(len(ts) - 1):
        t, h = ts[i], ts[i + 1] - ts[i]
        if abs(h) < 1e-15 * max(1.0, abs(t)):
            raise NumericalError(f"step size underflow at step {i + 1}", step=i + 1)
        k1 = fun(y, t)
        k2 = fun(y + 0.5 * h * k1, t + 0.5 * h)
        k3 = fun(y + 0.5 * h * k2, t + 0.5 * h)
        k4 = fun(y + h * k3, t + h)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(y, i + 1)
    return y


def ode_flow(net, spec, config, n=None, rng=None, direction="backward", x=None, d=2):
    """Integrate the probability-flow ODE with RK4.

    ``backward`` runs t_start -> t_end (from prior draws when ``x`` is None);
    ``forward`` runs t_end -> t_start from the given ``x``.
    """
    t0, t1 = config.interval(spec)
    if direction == "backward":
        if x is None:
            x = spec.prior_sample(n, d, _rng(rng))
        ts = time_grid(spec, t0, t1, config.steps, config.grid)
    elif direction == "forward":
        if x is None:
            raise ContractError("forward flow needs starting points")
        ts = time_grid(spec, t1, t0, config.steps, config.grid)
    else:
        raise ContractError(f"unknown direction {direction!r}")
    return rk4_integrate(lambda y, t: flow_velocity(net, spec, y, t), np.array(x, dtype=float), ts)


def sample(net, spec, config, n, rng, d=2):
    """Dispatch on ``config.kind``."""
    if config.kind == "em":
        return reverse_sde_em(net, spec, config, n, rng, d)
    if config.kind == "pc":
        return pc_sample(net, spec, config, n, rng, d)
    return ode_flow(net, spec, config, n, rng, "backward", d=d)


def regenerate_from_tau(net, spec, x0, tau, steps, rng):
    """Perturb x0 to x_tau = mu(tau) x0 + sigma(tau) z, then flow back to eps.

    Returns (reconstructions, x0).
    """
    if not spec.eps < tau <= spec.T:
        raise ContractError("tau must lie in (eps, T]")
    rng = _rng(rng)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    z = rng.standard_normal(x0.shape)
    xt = float(spec.mean_coeff(tau)) * x0 + float(spec.std(tau)) * z
    cfg = SamplerConfig("ode", steps=steps, t_start=tau, t_end=spec.eps)
    return ode_flow(net, spec, cfg, x=xt, direction="backward"), x0
