"""A small MLP score network with analytic gradients, plus Adam/EMA training state.

The network predicts eps_theta(x, t) and the score is s_theta = -eps_theta / sigma(t).
Inputs are the preconditioned point c_in(t) x, with c_in = 1/sqrt(mu^2 var_data + sigma^2),
concatenated with random Fourier features of a normalised time embedding eta(t).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, NumericalError, SingularKernelError
from .sde import SdeSpec

EMBEDDINGS = ("raw_t", "log_sigma", "unbounded_ve", "unbounded_vp")


def default_embedding(kind):
    return {"VP": "raw_t", "VE": "log_sigma", "RVE": "unbounded_ve"}[kind]


class TimeEmbedding:
    """Scalar time embedding eta(t).

    ``unbounded_ve`` follows log sigma above ``sigma0`` and -c1/sigma + c2 below it, with
    c1 = sigma0 and c2 = 1 + log sigma0 so value and slope (in sigma) agree at sigma0.
    ``unbounded_vp`` is the importance antiderivative anchored at eps, which is
    unbounded as eps -> 0 and maps importance-sampled times to a uniform variable.
    """

    def __init__(self, mode="raw_t", sigma0=0.01):
        if mode not in EMBEDDINGS:
            raise ContractError(f"unknown embedding {mode!r}")
        self.mode = mode
        self.sigma0 = float(sigma0)
        self.c1 = self.sigma0
        self.c2 = 1.0 + math.log(self.sigma0)

    def __call__(self, spec, t):
        t = np.asarray(t, dtype=float)
        if self.mode == "raw_t":
            return spec._check(t) * 1.0
        if np.any(t <= 0):
            raise SingularKernelError(f"embedding {self.mode} needs t > 0")
        if self.mode == "log_sigma":
            return 0.5 * np.log(spec.var(t))
        if self.mode == "unbounded_vp":
            return spec.iw_antiderivative(t) - spec.iw_antiderivative(spec.eps)
        return self.of_sigma(spec.std(t))

    def of_sigma(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(sigma >= self.sigma0, np.log(sigma), -self.c1 / sigma + self.c2)


def embed_time(emb, spec, t):
    return emb(spec, t)


def _silu(a):
    sig = 0.5 * (1.0 + np.tanh(0.5 * a))
    return a * sig, sig


def _silu_grad(a, sig):
    return sig * (1.0 + a * (1.0 - sig))


@dataclass
class NetConfig:
    d: int = 2
    width: int = 128
    depth: int = 2
    fourier_dim: int = 16
    fourier_scale: float = 1.0
    embedding: str = "raw_t"
    sigma0: float = 0.01
    data_var: float = 1.0
    seed: int = 0


class ScoreNet:
    """MLP eps-predictor: (d + 2F) -> width x depth (SiLU) -> d.

    ``params`` is a flat list ``[W1, b1, W2, b2, ...]`` with ``W`` of shape (in, out).
    """

    def __init__(self, spec, config=None, params=None, **overrides):
        cfg = config if config is not None else NetConfig()
        if overrides:
            cfg = NetConfig(**{**asdict(cfg), **overrides})
        self.spec = spec
        self.config = cfg
        self.embedding = TimeEmbedding(cfg.embedding, cfg.sigma0)
        rng = np.random.default_rng(cfg.seed)
        self.freqs = rng.standard_normal(cfg.fourier_dim) * cfg.fourier_scale
        lo, hi = (float(v) for v in self.embedding(spec, np.array([spec.eps, spec.T])))
        self._eta_shift = 0.5 * (lo + hi)
        self._eta_scale = 2.0 / (hi - lo) if hi > lo else 1.0
        self.params = params if params is not None else self._init_params(rng)

    # -- construction ---------------------------------------------------------

    @property
    def sizes(self):
        c = self.config
        return [c.d + 2 * c.fourier_dim] + [c.width] * c.depth + [c.d]

    def _init_params(self, rng):
        params = []
        sizes = self.sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            params.append(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
            params.append(np.zeros(fan_out))
        return params

    def with_params(self, params):
        net = ScoreNet.__new__(ScoreNet)
        net.__dict__.update(self.__dict__)
        net.params = params
        return net

    def zeros_like(self):
        return [np.zeros_like(p) for p in self.params]

    # -- forward --------------------------------------------------------------

    def _inputs(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
            raise ContractError("non-finite network input")
        mu = self.spec.mean_coeff(t)
        sig = self.spec.std(t)
        if np.any(sig <= 0):
            raise SingularKernelError("score network needs sigma(t) > 0")
        c_in = 1.0 / np.sqrt(mu ** 2 * self.config.data_var + sig ** 2)
        # solvers call with one shared time; the features are then computed once
        te = t[:1] if t.size > 1 and np.all(t == t[0]) else t
        e = (self.embedding(self.spec, te) - self._eta_shift) * self._eta_scale
        ang = 2 * math.pi * e[:, None] * self.freqs[None, :]
        feats = np.broadcast_to(np.concatenate([np.sin(ang), np.cos(ang)], axis=1), (x.shape[0], ang.shape[1] * 2))
        h0 = np.concatenate([x * c_in[:, None], feats], axis=1)
        return h0, sig, c_in

    def _forward(self, h0):
        """Return output and the cache needed by backward/divergence."""
        n_layers = len(self.params) // 2
        hs, pres, sigs = [h0], [], []
        h = h0
        for i in range(n_layers):
            a = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                pres.append(a)
                h, s = _silu(a)
                sigs.append(s)
                hs.append(h)
            else:
                h = a
        return h, (hs, pres, sigs)

    def eps_pred(self, x, t):
        h0, _, _ = self._inputs(x, t)
        out, _ = self._forward(h0)
        return out

    def forward(self, x, t):
        h0, sig, _ = self._inputs(x, t)
        out, _ = self._forward(h0)
        return -out / sig[:, None]

    __call__ = forward

    # -- gradients ------------------------------------------------------------

    def backward_grad(self, x, t, target, weight=None):
        """Loss (1/2B) sum_b w_b |s(x_b, t_b) - target_b|^2 and its gradient w.r.t. params."""
        h0, sig, _ = self._inputs(x, t)
        out, (hs, pres, sigs) = self._forward(h0)
        B = h0.shape[0]
        w = np.ones(B) if weight is None else np.broadcast_to(np.asarray(weight, dtype=float), (B,))
        s = -out / sig[:, None]
        r = s - np.asarray(target, dtype=float)
        loss = 0.5 * float(np.sum(w * np.sum(r * r, axis=1))) / B
        delta = (w[:, None] * r / B) * (-1.0 / sig[:, None])
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            grads[2 * i] = hs[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * _silu_grad(pres[i - 1], sigs[i - 1])
        return loss, grads

    def divergence(self, x, t):
        """Exact trace of d s_theta / dx by forward-mode tangents, one per input coordinate."""
        return self.score_and_divergence(x, t)[1]

    def score_and_divergence(self, x, t):
        """Score and its exact divergence from a single forward pass."""
        h0, sig, c_in = self._inputs(x, t)
        out, cache = self._forward(h0)
        return -out / sig[:, None], self._trace(cache, c_in) / -sig

    def _trace(self, cache, c_in):
        _, pres, sigs = cache
        d = self.config.d
        n_layers = len(self.params) // 2
        W1 = self.params[0]
        # tangent of the first pre-activation along e_j is c_in * W1[j]
        tan = c_in[:, None, None] * W1[None, :d, :]
        for i in range(1, n_layers):
            tan = tan * _silu_grad(pres[i - 1], sigs[i - 1])[:, None, :]
            tan = tan @ self.params[2 * i]
        return np.einsum("njj->n", tan)

    # -- serialisation --------------------------------------------------------

    def to_dict(self):
        return {
            "spec": asdict(self.spec),
            "config": asdict(self.config),
            "shapes": [list(p.shape) for p in self.params],
            "params": [p.ravel().tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, doc):
        spec = SdeSpec(**doc["spec"])
        params = [np.asarray(v, dtype=float).reshape(s) for v, s in zip(doc["params"], doc["shapes"])]
        return cls(spec, NetConfig(**doc["config"]), params=params)


class LinearScore:
    """Score s(x, t) = -a(t) x for a scalar function ``a``."""

    def __init__(self, a):
        self.a = a

    def __call__(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.broadcast_to(np.asarray(self.a(np.asarray(t, dtype=float)), dtype=float), (x.shape[0],))
        return -a[:, None] * x

    def divergence(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.broadcast_to(np.asarray(self.a(np.asarray(t, dtype=float)), dtype=float), (x.shape[0],))
        return -a * x.shape[1]


# -- optimiser ----------------------------------------------------------------


@dataclass
class TrainState:
    lr: float = 2e-4
    warmup: int = 5000
    clip: float = 1.0
    ema_decay: float = 0.9999
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    ema: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net, **kw):
        st = cls(**kw)
        st.m = net.zeros_like()
        st.v = net.zeros_like()
        st.ema = [p.copy() for p in net.params]
        return st

    def current_lr(self, step=None):
        step = self.step if step is None else step
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(step / self.warmup, 1.0)

    def to_dict(self):
        doc = {k: getattr(self, k) for k in ("lr", "warmup", "clip", "ema_decay", "beta1", "beta2", "adam_eps", "step")}
        for name in ("m", "v", "ema"):
            doc[name] = [a.ravel().tolist() for a in getattr(self, name)]
        return doc

    @classmethod
    def from_dict(cls, doc, shapes):
        st = cls(**{k: doc[k] for k in ("lr", "warmup", "clip", "ema_decay", "beta1", "beta2", "adam_eps", "step")})
        for name in ("m", "v", "ema"):
            setattr(st, name, [np.asarray(a, dtype=float).reshape(s) for a, s in zip(doc[name], shapes)])
        return st


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def train_step(state, net, grads):
    """One Adam step with linear warmup and global-norm clipping, followed by EMA.

    Mutates ``net.params`` and ``state`` in place and returns the pre-clip gradient norm.
    """
    if len(grads) != len(net.params) or any(g.shape != p.shape for g, p in zip(grads, net.params)):
        raise ContractError("gradient shapes do not match parameters")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericalError(f"non-finite gradient at step {state.step + 1}", step=state.step + 1)
    scale = min(1.0, state.clip / norm) if state.clip > 0 and norm > 0 else 1.0
    state.step += 1
    lr = state.current_lr()
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, g in enumerate(grads):
        g = g * scale
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        net.params[i] = net.params[i] - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.adam_eps)
    dec = state.ema_decay
    state.ema = [dec * e + (1 - dec) * p for e, p in zip(state.ema, net.params)]
    return norm


def save_checkpoint(path, net, state=None, meta=None):
    doc = {"format": "softtrunc-checkpoint/1", "net": net.to_dict()}
    if state is not None:
        doc["state"] = state.to_dict()
    if meta:
        doc["meta"] = meta
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    """Return (net, state or None, meta)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    net = ScoreNet.from_dict(doc["net"])
    state = TrainState.from_dict(doc["state"], [p.shape for p in net.params]) if "state" in doc else None
    return net, state, doc.get("meta", {})
