"""Run configuration: dotted keys with typed defaults, read from a plain key=value file.

File syntax::

    # comment
    sde.kind = VE
    [train]
    steps = 2000      # becomes train.steps

Unknown keys are rejected.  ``auto`` is accepted wherever the default is ``auto`` and is
resolved against the SDE kind by :meth:`RunConfig.resolved`.
"""

from __future__ import annotations

import hashlib
import json

from . import __version__


class ConfigError(ValueError):
    """Invalid configuration (unknown key, bad value)."""


DEFAULTS = {
    "sde.kind": "VP",
    "sde.beta_min": 0.1,
    "sde.beta_max": 20.0,
    "sde.sigma_min": 0.01,
    "sde.sigma_max": 50.0,
    "sde.eps": 1e-5,
    "sde.T": 1.0,
    "data.components": 8,
    "data.radius": 4.0,
    "data.std": 0.3,
    "data.d": 2,
    "data.seed": 0,
    "model.width": 128,
    "model.depth": 2,
    "model.embedding": "auto",
    "model.fourier_dim": 16,
    "model.sigma0": 0.01,
    "train.lr": 2e-4,
    "train.warmup": 5000,
    "train.clip": 1.0,
    "train.ema": "auto",
    "train.steps": 20000,
    "train.batch": 256,
    "train.log_every": 100,
    "weighting.kind": "likelihood",
    "prior.k": "auto",
    "prior.enabled": False,
    "sampler.kind": "auto",
    "sampler.steps": 1000,
    "sampler.snr": 0.16,
    "eval.n": 500,
    "eval.rk_steps": 1000,
    "eval.nelbo_n": 100000,
    "eval.samples": 5000,
    "eval.mode": "after_correction",
    "diagnose.n": 20000,
    "regen.tau": 0.2,
    "regen.n": 200,
    "regen.steps": 1000,
    "verify.delta": 0.0,
    "verify.n": 400000,
    "seed": 0,
    "out": "runs",
    "tag": "",
}

CHOICES = {
    "sde.kind": ("VP", "VE", "RVE"),
    "model.embedding": ("auto", "raw_t", "log_sigma", "unbounded_ve", "unbounded_vp"),
    "weighting.kind": ("likelihood", "variance", "general"),
    "sampler.kind": ("auto", "em", "pc", "ode"),
    "eval.mode": ("after_correction", "before_correction"),
}

_NUMERIC_AUTO = ("train.ema", "prior.k")

# keys not hashed: they only say where output goes
_UNHASHED = ("out",)


def _parse_value(key, raw):
    default = DEFAULTS[key]
    raw = raw.strip()
    if raw.lower() == "auto" and default == "auto":
        return "auto"
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if isinstance(default, float) or key in _NUMERIC_AUTO:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    if key in CHOICES:
        val = raw.upper() if key == "sde.kind" else raw
        if val not in CHOICES[key]:
            raise ConfigError(f"{key} must be one of {CHOICES[key]}, got {raw!r}")
        return val
    return raw


class RunConfig:
    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse_value(key, value) if isinstance(value, str) else value

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        section = ""
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if section and "." not in key:
                key = f"{section}.{key}"
            cfg.set(key, val)
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def apply_overrides(self, pairs):
        for item in pairs or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            self.set(k.strip(), v)
        return self

    def resolved(self):
        """Copy with every ``auto`` replaced by its per-SDE default."""
        v = dict(self.values)
        kind = v["sde.kind"]
        ve_family = kind != "VP"
        if v["model.embedding"] == "auto":
            v["model.embedding"] = {"VP": "raw_t", "VE": "log_sigma", "RVE": "unbounded_ve"}[kind]
        if v["train.ema"] == "auto":
            v["train.ema"] = 0.999 if ve_family else 0.9999
        if v["prior.k"] == "auto":
            v["prior.k"] = 2.0 if ve_family else 1.0
        if v["sampler.kind"] == "auto":
            v["sampler.kind"] = "pc" if ve_family else "em"
        return v

    def hash(self):
        v = {k: val for k, val in self.resolved().items() if k not in _UNHASHED}
        blob = json.dumps(v, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))

    def metadata(self):
        return {"config_hash": self.hash(), "seed": self.values["seed"], "tool_version": __version__,
                "tag": self.values["tag"]}

    # builders

    def sde(self):
        from .sde import SdeSpec

        v = self.values
        return SdeSpec(v["sde.kind"], beta_min=v["sde.beta_min"], beta_max=v["sde.beta_max"],
                       sigma_min=v["sde.sigma_min"], sigma_max=v["sde.sigma_max"], eps=v["sde.eps"], T=v["sde.T"])

    def data(self):
        from .oracle import ring_mixture

        v = self.values
        return ring_mixture(v["data.components"], v["data.radius"], v["data.std"], v["data.d"])

    def prior(self):
        from .weighting import TruncationPrior

        v = self.resolved()
        return TruncationPrior(v["prior.k"], v["sde.eps"], v["sde.T"])

    def weighting(self):
        from .weighting import WeightingFn

        kind = self.values["weighting.kind"]
        return WeightingFn(kind, self.prior() if kind == "general" else None)

    def sampler(self):
        from .samplers import SamplerConfig

        v = self.resolved()
        return SamplerConfig(v["sampler.kind"], steps=v["sampler.steps"], snr=v["sampler.snr"])
