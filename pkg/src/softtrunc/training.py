"""Training loop for the score network with fixed or soft truncation."""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericalError
from .losses import _draw, soft_truncation_step
from .model import NetConfig, ScoreNet, TrainState, train_step
from .weighting import WeightingFn


def data_variance(gm, spec):
    """Per-coordinate second moment of the data, used for input preconditioning."""
    return gm.second_moment(spec, 0.0) / gm.d


def build_net(spec, gm, width=128, depth=2, embedding="raw_t", fourier_dim=16, sigma0=0.01, seed=0):
    cfg = NetConfig(d=gm.d, width=width, depth=depth, fourier_dim=fourier_dim, embedding=embedding,
                    sigma0=sigma0, data_var=data_variance(gm, spec), seed=seed)
    return ScoreNet(spec, cfg)


def train(net, state, gm, spec, steps, batch, rng, weighting=None, prior=None, log_every=100, callback=None):
    """Run ``steps`` optimiser steps; returns log rows (step, loss, tau, grad_norm).

    With ``prior`` set, each mini-batch draws its own truncation time tau ~ prior
    (soft truncation); otherwise tau = eps throughout.
    """
    weighting = weighting or WeightingFn("likelihood")
    log = []
    acc, cnt = 0.0, 0
    for _ in range(steps):
        if prior is not None:
            loss, grads, tau = soft_truncation_step(net, gm, spec, prior, batch, rng, weighting)
        else:
            tau = spec.eps
            t, z, xt, target, w = _draw(gm, spec, weighting, tau, batch, rng)
            loss, grads = net.backward_grad(xt, t, target, w)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at step {state.step + 1}", step=state.step + 1)
        gn = train_step(state, net, grads)
        acc += loss
        cnt += 1
        if log_every and state.step % log_every == 0:
            log.append((state.step, acc / cnt, tau, gn))
            acc, cnt = 0.0, 0
            if callback is not None:
                callback(state.step, log[-1])
    return log


def train_from_config(cfg):
    """Build and train a network from a RunConfig; returns (net, state, log)."""
    v = cfg.resolved()
    spec, gm = cfg.sde(), cfg.data()
    net = build_net(spec, gm, v["model.width"], v["model.depth"], v["model.embedding"], v["model.fourier_dim"],
                    v["model.sigma0"], seed=v["seed"])
    state = TrainState.for_net(net, lr=v["train.lr"], warmup=v["train.warmup"], clip=v["train.clip"],
                               ema_decay=v["train.ema"])
    rng = np.random.default_rng(v["seed"])
    prior = cfg.prior() if v["prior.enabled"] else None
    log = train(net, state, gm, spec, v["train.steps"], v["train.batch"], rng, cfg.weighting(), prior,
                v["train.log_every"])
    return net, state, log
