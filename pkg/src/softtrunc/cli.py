"""Command-line experiment runner.

Subcommands: train, eval, sample, regenerate, diagnose, verify.  Every artifact carries
the config hash and tool version.  Exit codes: 0 ok, 2 usage or config error,
3 numerical failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .errors import ContractError, DomainError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4


def _load_model(cfg, checkpoint):
    """Return a score model: the EMA weights of a checkpoint, or the exact score for ``exact``."""
    from .model import load_checkpoint
    from .oracle import ExactScore

    if checkpoint in (None, "exact"):
        return ExactScore(cfg.data(), cfg.sde())
    if not os.path.isfile(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    net, state, _ = load_checkpoint(checkpoint)
    return net.with_params(state.ema) if state is not None else net


def _out(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    return out


def run_train(cfg):
    from .io import write_csv
    from .model import save_checkpoint
    from .training import train_from_config

    out = _out(cfg)
    net, state, log = train_from_config(cfg)
    meta = cfg.metadata()
    save_checkpoint(os.path.join(out, "checkpoint.json"), net, state, meta)
    write_csv(os.path.join(out, "train_log.csv"), ["step", "loss", "tau", "grad_norm"], log, meta)
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_text())
    print(f"trained {state.step} steps; final logged loss {log[-1][1]:.4f}" if log else "trained")
    return EXIT_OK


def evaluate(cfg, model, modes=None):
    """EvalReport for ``model``; ``modes`` defaults to both correction modes."""
    from .likelihood import EvalReport, nelbo_eval, ode_nll, sample_quality
    from .samplers import sample

    v = cfg.resolved()
    spec, gm = cfg.sde(), cfg.data()
    seed = v["seed"]
    x = gm.sample(v["eval.n"], np.random.default_rng([v["data.seed"], 1]))
    wanted = modes or ("after_correction", "before_correction")
    if v["eval.mode"] not in wanted:
        wanted = (v["eval.mode"],) + tuple(wanted)
    modes, pointwise = {}, {}
    nb = nelbo_eval(model, gm, spec, v["eval.nelbo_n"], True, np.random.default_rng([seed, 2]))
    for mode in wanted:
        vals = ode_nll(model, spec, x, mode, v["eval.rk_steps"], np.random.default_rng([seed, 3]))
        pointwise[mode] = vals
        modes[mode] = {"nll_no_recon": float(vals.mean()), "nll": float(vals.mean()) + nb["recon_term"],
                       "nll_std_error": float(vals.std(ddof=1) / np.sqrt(len(vals)))}
    oracle = gm.sample(v["eval.samples"], np.random.default_rng([v["data.seed"], 4]))
    xs = sample(model, spec, cfg.sampler(), v["eval.samples"], np.random.default_rng([seed, 5]), gm.d)
    main = modes[v["eval.mode"]]
    rep = EvalReport(
        nll=main["nll"], nelbo=nb["nelbo"], nelbo_no_recon=nb["nelbo_no_recon"], recon_term=nb["recon_term"],
        mode=v["eval.mode"], sample_quality=float(sample_quality(xs, oracle)), n=int(v["eval.n"]), seed=int(seed),
        config_hash=cfg.hash(), nll_no_recon=main["nll_no_recon"], nll_std_error=main["nll_std_error"],
        nelbo_std_error=nb["nelbo_std_error"], modes=modes,
    )
    return rep, pointwise[v["eval.mode"]], x


def run_eval(cfg, checkpoint, dump_pointwise=False):
    from .io import write_csv, write_json

    model = _load_model(cfg, checkpoint)
    out = _out(cfg)
    rep, pointwise, x = evaluate(cfg, model)
    doc = rep.to_dict()
    doc["tool_version"] = __version__
    write_json(os.path.join(out, "eval_report.json"), doc)
    if dump_pointwise:
        d = x.shape[1]
        rows = [list(xi) + [nl] for xi, nl in zip(x, pointwise)]
        write_csv(os.path.join(out, "nll_pointwise.csv"), [f"x{j}" for j in range(d)] + ["nll"], rows,
                  cfg.metadata())
    print(f"nll {rep.nll:.4f}  nelbo {rep.nelbo:.4f}  energy {rep.sample_quality:.5f}  (nats/dim)")
    return EXIT_OK


def run_sample(cfg, checkpoint):
    from .io import write_csv
    from .samplers import sample

    v = cfg.resolved()
    model = _load_model(cfg, checkpoint)
    gm, spec = cfg.data(), cfg.sde()
    xs = sample(model, spec, cfg.sampler(), v["eval.samples"], np.random.default_rng(v["seed"]), gm.d)
    write_csv(os.path.join(_out(cfg), "samples.csv"), [f"x{j}" for j in range(gm.d)], xs,
              {**cfg.metadata(), "sampler": v["sampler.kind"]})
    print(f"wrote {len(xs)} samples")
    return EXIT_OK


def run_regenerate(cfg, checkpoint):
    from .io import write_csv
    from .samplers import regenerate_from_tau

    v = cfg.resolved()
    model = _load_model(cfg, checkpoint)
    gm, spec = cfg.data(), cfg.sde()
    rng = np.random.default_rng(v["seed"])
    x0 = gm.sample(v["regen.n"], rng)
    rec, _ = regenerate_from_tau(model, spec, x0, v["regen.tau"], v["regen.steps"], rng)
    err = np.linalg.norm(rec - x0, axis=1)
    d = gm.d
    rows = [list(a) + list(b) + [e] for a, b, e in zip(x0, rec, err)]
    header = [f"x0_{j}" for j in range(d)] + [f"rec_{j}" for j in range(d)] + ["error"]
    write_csv(os.path.join(_out(cfg), "regenerate.csv"), header, rows, {**cfg.metadata(), "tau": v["regen.tau"]})
    print(f"median reconstruction error {np.median(err):.4f} at tau={v['regen.tau']}")
    return EXIT_OK


def diagnostics(cfg, model):
    """Tables: integrand profile, bound against tau, importance quantiles, eta CDF."""
    from scipy import stats

    from .losses import PROFILE_COLUMNS, integrand_profile, truncated_bound
    from .model import TimeEmbedding
    from .weighting import ImportanceDist

    v = cfg.resolved()
    spec, gm = cfg.sde(), cfg.data()
    n = v["diagnose.n"]
    rng = np.random.default_rng(v["seed"])
    grid = np.geomspace(max(spec.eps, 1e-4), spec.T, 25)
    profile = integrand_profile(model, gm, spec, grid, n, rng)
    taus = np.concatenate([[spec.eps], np.geomspace(1e-4, 0.5, 12)])
    taus = taus[taus < spec.T]
    bound_rows = []
    for tau in taus:
        b = truncated_bound(model, gm, spec, tau, 10 * n, rng)
        p = b.parts
        bound_rows.append((tau, b.value, b.std_error, p["score"], p["cross"], p["divergence"], p["prior"]))
    probs = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    q_rows = []
    for tau in (spec.eps, 0.1):
        if tau < spec.T:
            q = ImportanceDist(spec, tau).ppf(probs)
            q_rows += [(tau, p, t) for p, t in zip(probs, q)]
    dist = ImportanceDist(spec, spec.eps)
    emb = TimeEmbedding("unbounded_vp")
    eta = emb(spec, dist.sample(rng, 100_000))
    eta_T = float(emb(spec, spec.T))
    levels = np.linspace(0, 1, 21)
    ecdf = np.searchsorted(np.sort(eta), levels * eta_T, side="right") / eta.size
    ks = stats.kstest(eta / eta_T, "uniform").statistic
    eta_rows = [(lv * eta_T, lv, e) for lv, e in zip(levels, ecdf)]
    return {
        "integrand_profile": (list(PROFILE_COLUMNS), profile),
        "bound_vs_tau": (["tau", "value", "std_error", "score", "cross", "divergence", "prior"], bound_rows),
        "iw_quantiles": (["tau", "prob", "t"], q_rows),
        "eta_cdf": (["eta", "uniform_cdf", "empirical_cdf"], eta_rows),
    }, ks


def run_diagnose(cfg, checkpoint):
    from .io import write_csv

    out = _out(cfg)
    model = _load_model(cfg, checkpoint)
    tables, ks = diagnostics(cfg, model)
    meta = cfg.metadata()
    for name, (header, rows) in tables.items():
        write_csv(os.path.join(out, f"{name}.csv"), header, rows, meta)
    print(f"wrote {len(tables)} tables; eta KS statistic {ks:.4f}")
    return EXIT_OK


def run_verify(cfg):
    from .io import write_json
    from .verify import verification_battery

    v = cfg.resolved()
    checks = verification_battery(delta=v["verify.delta"], n=v["verify.n"], seed=v["seed"], eps=v["sde.eps"])
    failed = [c for c in checks if c["status"] != "pass"]
    doc = {**cfg.metadata(), "checks": checks, "passed": len(checks) - len(failed), "failed": len(failed)}
    write_json(os.path.join(_out(cfg), "verify_manifest.json"), doc)
    for c in failed:
        print(f"FAIL {c['name']}: lhs={c['lhs']:.6g} rhs={c['rhs']:.6g} tol={c['tolerance']:.1g}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="softtrunc", description=__doc__.split("\n", 1)[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "sample", "regenerate", "diagnose", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        if name in ("eval", "sample", "regenerate", "diagnose"):
            sp.add_argument("--checkpoint", metavar="PATH", default=None,
                            help="checkpoint file, or 'exact' for the analytic score")
        if name == "eval":
            sp.add_argument("--dump-pointwise", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        cfg.apply_overrides(args.set)
        if args.seed is not None:
            cfg.set("seed", args.seed)
        if args.out is not None:
            cfg.set("out", args.out)
        cfg.sde()
        if args.command == "train":
            return run_train(cfg)
        if args.command == "eval":
            if args.checkpoint is None:
                raise ConfigError("eval needs --checkpoint (a file or 'exact')")
            return run_eval(cfg, args.checkpoint, args.dump_pointwise)
        if args.command == "sample":
            return run_sample(cfg, args.checkpoint)
        if args.command == "regenerate":
            return run_regenerate(cfg, args.checkpoint)
        if args.command == "diagnose":
            return run_diagnose(cfg, args.checkpoint)
        return run_verify(cfg)
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
