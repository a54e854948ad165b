"""Command-line interface.

Subcommands: simulate, loglik, variance-study, optimal-n, is2, pmmh,
fit-proposal, selftest. Configuration comes from a JSON file plus flag
overrides; every run that writes results also writes a manifest (root seed,
resolved config and its sha256, package versions) from which the
deterministic result files can be regenerated bit-identically. Timing-based
outputs (the efficiency table) are hardware-dependent and live in their own
file, outside the reproducibility contract.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import (
    MvtProposal,
    bivariate_sv_param_space,
    is2_run,
    make_loglik,
    optimal_particles,
    pmmh_arw,
    pmmh_imh,
    train_mvt_proposal,
    transform_inverse,
)
from .errors import ContractError, PeisError
from .harness import (
    ExperimentConfig,
    MethodSpec,
    ObservationSeries,
    load_returns_csv,
    run_method_once,
    variance_study,
    write_returns_csv,
)
from .eis import EisConfig, fit_eis
from .models import get_model
from .particle import PeisConfig, eis_loglik, peis_loglik


class UsageError(Exception):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def _manifest(command: str, config: dict, seed) -> dict:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "command": command,
        "seed": seed,
        "config": config,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "peis": __version__,
        },
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"invalid config JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    return cfg


def _resolve(cfg: dict, args, keys) -> dict:
    """Overlay CLI flags (when given) onto the config dict."""
    out = dict(cfg)
    for cli_name, cfg_name in keys:
        val = getattr(args, cli_name, None)
        if val is not None:
            out[cfg_name] = val
    return out


def _require(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        raise UsageError(f"missing required option {key!r}")
    return cfg[key]


def _get_observations(cfg: dict, model, theta):
    if cfg.get("data"):
        series = load_returns_csv(cfg["data"])
        if series.values.shape[1] != model.obs_dim:
            raise UsageError(
                f"{model.model_id} expects {model.obs_dim} series, file has "
                f"{series.values.shape[1]}"
            )
        return series.values
    n = int(_require(cfg, "n"))
    sim_seed = int(cfg.get("sim_seed", cfg.get("seed", 0)))
    from ._rng import substream

    return model.simulate(theta, n, substream(sim_seed, "dgp"))[1]


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    cfg = _resolve(_load_config(args), args, [
        ("model", "model"), ("n", "n"), ("seed", "seed"),
    ])
    model, theta = get_model(str(_require(cfg, "model")))
    n = int(_require(cfg, "n"))
    seed = int(cfg.get("seed", 0))
    from .models import simulate_dgp

    traj = simulate_dgp(model, theta, n, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"]
            + [f"x{i+1}" for i in range(model.m)]
            + [f"y{i+1}" for i in range(model.obs_dim)]
        )
        for t in range(n):
            writer.writerow([t + 1] + [_fmt(v) for v in traj.x[t]] + [_fmt(v) for v in traj.y[t]])
    _write_json(out / "manifest.json", _manifest("simulate", cfg, seed))
    print(f"wrote {out / 'trajectory.csv'}")
    return 0


def _cmd_loglik(args) -> int:
    cfg = _resolve(_load_config(args), args, [
        ("model", "model"), ("method", "method"), ("n", "n"), ("particles", "particles"),
        ("seed", "seed"), ("data", "data"), ("threshold", "threshold"),
        ("eis_s", "eis_s"), ("eis_max_iter", "eis_max_iter"), ("mode", "mode"),
    ])
    model, theta = get_model(str(_require(cfg, "model")))
    method = str(_require(cfg, "method"))
    seed = int(cfg.get("seed", 0))
    y = _get_observations(cfg, model, theta)
    spec = MethodSpec(
        name=method,
        n_particles=int(_require(cfg, "particles")),
        mode=str(cfg.get("mode", "partial")),
        threshold=cfg.get("threshold"),
    )
    eis_cfg = EisConfig(s=int(cfg.get("eis_s", 50)), max_iter=int(cfg.get("eis_max_iter", 10)))
    if spec.name in ("bf", "apf0", "sisr2"):
        ll, _, _ = run_method_once(model, theta, y, spec, eis_cfg, seed)
        est = None
    else:
        cfg_fit = replace(eis_cfg, mode=spec.mode)
        params = fit_eis(model, theta, y, cfg_fit, seed=seed)
        if spec.name == "eis":
            est = eis_loglik(model, theta, y, params, spec.n_particles, seed=seed)
        else:
            est = peis_loglik(
                model, theta, y, params,
                PeisConfig(spec.n_particles, threshold=spec.threshold or 0.9), seed=seed,
            )
        ll = est.loglik
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {"loglik": ll, "method": spec.label, "model": model.model_id}
    if est is not None:
        result["resample_count"] = est.resample_count
        with open(out / "increments.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "increment", "forward_ess"])
            for t, (inc, e) in enumerate(zip(est.increments, est.ess_path), start=1):
                writer.writerow([t, _fmt(inc), _fmt(e)])
    _write_json(out / "result.json", result)
    _write_json(out / "manifest.json", _manifest("loglik", cfg, seed))
    print(json.dumps(result))
    return 0


def _parse_methods(cfg: dict):
    methods = cfg.get("methods")
    if not methods:
        raise UsageError("config needs a non-empty 'methods' list")
    specs = []
    for entry in methods:
        specs.append(
            MethodSpec(
                name=str(_require(entry, "name")),
                n_particles=int(_require(entry, "particles")),
                mode=str(entry.get("mode", "partial")),
                threshold=entry.get("threshold"),
                antithetic=bool(entry.get("antithetic", True)),
            )
        )
    return tuple(specs)


def _cmd_variance_study(args) -> int:
    cfg = _resolve(_load_config(args), args, [
        ("model", "model"), ("n", "n"), ("seed", "seed"),
        ("trajectories", "trajectories"), ("evals", "evals"),
    ])
    study_cfg = ExperimentConfig(
        model_id=str(_require(cfg, "model")),
        n=int(_require(cfg, "n")),
        methods=_parse_methods(cfg),
        n_trajectories=int(_require(cfg, "trajectories")),
        n_evals=int(_require(cfg, "evals")),
        seed=int(cfg.get("seed", 0)),
        eis_s=int(cfg.get("eis_s", 50)),
        eis_max_iter=int(cfg.get("eis_max_iter", 10)),
        benchmark=str(cfg.get("benchmark", "eis")),
    )
    result = variance_study(study_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "draws.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "trajectory", "eval", "loglik"])
        for label, mr in result.methods.items():
            for i in range(mr.logliks.shape[0]):
                for j in range(mr.logliks.shape[1]):
                    v = mr.logliks[i, j]
                    writer.writerow([label, i, j, _fmt(v) if math.isfinite(v) else "failed"])
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "variance", "variance_ratio", "failures"])
        for label, mr in result.methods.items():
            writer.writerow([label, _fmt(mr.var_hat), _fmt(mr.var_ratio), mr.failures])
    with open(out / "efficiency.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "tau1", "n_tau2", "efficiency_n", "efficiency_inf"])
        for label, mr in result.methods.items():
            writer.writerow([label, _fmt(mr.tau1), _fmt(mr.n_tau2), _fmt(mr.eff_n), _fmt(mr.eff_inf)])
    _write_json(out / "manifest.json", _manifest("variance-study", cfg, study_cfg.seed))
    for label, mr in result.methods.items():
        print(f"{label}: variance {mr.var_hat:.6g} ratio {mr.var_ratio:.4g}")
    return 0


def _cmd_optimal_n(args) -> int:
    for name in ("var_unit", "tau2"):
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
    try:
        n_opt = optimal_particles(args.var_unit, args.tau1, args.tau2)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    result = {"n_opt": n_opt, "var_unit": args.var_unit, "tau1": args.tau1, "tau2": args.tau2}
    print(json.dumps(result))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "result.json", result)
        _write_json(out / "manifest.json", _manifest("optimal-n", result, None))
    return 0


def _bayes_setup(cfg: dict):
    model, theta = get_model(str(_require(cfg, "model")))
    if model.model_id != "bivariate-sv":
        raise UsageError("Bayesian subcommands currently support model 'bivariate-sv'")
    space = bivariate_sv_param_space()
    y = _get_observations(cfg, model, theta)
    method = str(cfg.get("method", "peis"))
    particles = int(cfg.get("particles", 50))
    eis_cfg = EisConfig(
        s=int(cfg.get("eis_s", 32)),
        max_iter=int(cfg.get("eis_max_iter", 5)),
        rel_tol=float(cfg.get("eis_rel_tol", 5e-3)),
    )
    loglik = make_loglik(model, y, space, method, particles, eis_cfg=eis_cfg)
    return model, theta, space, y, loglik


def _proposal_from_cfg(cfg: dict, space, loglik, seed: int) -> MvtProposal:
    if "proposal" in cfg:
        p = cfg["proposal"]
        if isinstance(p, str):
            p = json.loads(Path(p).read_text())
        return MvtProposal(
            location=np.asarray(p["location"], dtype=float),
            scale=np.asarray(p["scale"], dtype=float),
            dof=float(p.get("dof", 5.0)),
        )
    train = cfg.get("train", {})
    return train_mvt_proposal(
        space, loglik, seed=seed,
        m0=int(train.get("m0", 500)),
        rounds=int(train.get("rounds", 5)),
        dof=float(train.get("dof", 5.0)),
    )


def _cmd_is2(args) -> int:
    cfg = _resolve(_load_config(args), args, [
        ("model", "model"), ("n", "n"), ("seed", "seed"), ("data", "data"),
        ("method", "method"), ("particles", "particles"), ("draws", "draws"),
    ])
    seed = int(cfg.get("seed", 0))
    model, theta, space, y, loglik = _bayes_setup(cfg)
    proposal = _proposal_from_cfg(cfg, space, loglik, seed)
    result = is2_run(space, loglik, proposal, int(cfg.get("draws", 1000)), seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "posterior.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "mean", "sd", "skew", "kurt", "ci5", "ci95", "mean_se"])
        for k, name in enumerate(space.names):
            writer.writerow(
                [name, _fmt(result.mean[k]), _fmt(result.sd[k]), _fmt(result.skew[k]),
                 _fmt(result.kurt[k]), _fmt(result.ci90[k, 0]), _fmt(result.ci90[k, 1]),
                 _fmt(result.mean_se[k])]
            )
    _write_json(out / "result.json", {
        "log_marglik": result.log_marglik,
        "marglik_se": result.marglik_se,
        "ess": result.ess,
    })
    _write_json(out / "manifest.json", _manifest("is2", cfg, seed))
    print(f"log marginal likelihood {result.log_marglik:.4f} (se {result.marglik_se:.4f})")
    return 0


def _cmd_pmmh(args) -> int:
    cfg = _resolve(_load_config(args), args, [
        ("model", "model"), ("n", "n"), ("seed", "seed"), ("data", "data"),
        ("method", "method"), ("particles", "particles"), ("iters", "iters"),
        ("sampler", "sampler"),
    ])
    seed = int(cfg.get("seed", 0))
    model, theta, space, y, loglik = _bayes_setup(cfg)
    iters = int(cfg.get("iters", 10000))
    burn_in = int(cfg.get("burn_in", iters // 4))
    sampler = str(cfg.get("sampler", "arw"))
    if sampler == "arw":
        init = cfg.get("init")
        init_theta = np.asarray(init, dtype=float) if init else np.asarray(
            [0.0, 0.0, 0.5, 0.95, 0.95, 0.95, 0.02, 0.02, 0.01]
        )
        chain = pmmh_arw(space, loglik, init_theta, iters, seed, burn_in=burn_in)
    elif sampler == "imh":
        proposal = _proposal_from_cfg(cfg, space, loglik, seed)
        chain = pmmh_imh(space, loglik, proposal, iters, seed, burn_in=burn_in)
    else:
        raise UsageError(f"unknown sampler {sampler!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "chain.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(space.names))
        for row in chain.chain:
            writer.writerow([_fmt(v) for v in row])
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "mean", "inefficiency"])
        for k, name in enumerate(space.names):
            writer.writerow([name, _fmt(chain.chain[:, k].mean()), _fmt(chain.inefficiency[k])])
    _write_json(out / "result.json", {"accept_rate": chain.accept_rate, "iters": iters,
                                      "burn_in": burn_in, "sampler": sampler})
    _write_json(out / "manifest.json", _manifest("pmmh", cfg, seed))
    print(f"acceptance rate {chain.accept_rate:.3f}")
    return 0


def _cmd_fit_proposal(args) -> int:
    cfg = _resolve(_load_config(args), args, [
        ("model", "model"), ("n", "n"), ("seed", "seed"), ("data", "data"),
        ("method", "method"), ("particles", "particles"),
    ])
    seed = int(cfg.get("seed", 0))
    _, _, space, _, loglik = _bayes_setup(cfg)
    train_cfg = {k: v for k, v in cfg.items() if k != "proposal"}
    proposal = _proposal_from_cfg(train_cfg, space, loglik, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "proposal.json", {
        "location": proposal.location.tolist(),
        "scale": proposal.scale.tolist(),
        "dof": proposal.dof,
        "names": list(space.names),
    })
    _write_json(out / "manifest.json", _manifest("fit-proposal", cfg, seed))
    print(f"wrote {out / 'proposal.json'}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return run_selftest(verbose=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peis",
        description="Particle efficient importance sampling for state space models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="draw a trajectory from a model DGP")
    add_common(p)
    p.add_argument("--model")
    p.add_argument("--n", type=int)

    p = sub.add_parser("loglik", help="one log-likelihood evaluation")
    add_common(p)
    p.add_argument("--model")
    p.add_argument("--method", choices=["bf", "apf0", "sisr2", "eis", "peis"])
    p.add_argument("--n", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--data")
    p.add_argument("--threshold", type=float)
    p.add_argument("--eis-s", dest="eis_s", type=int)
    p.add_argument("--eis-max-iter", dest="eis_max_iter", type=int)
    p.add_argument("--mode", choices=["partial", "full"])

    p = sub.add_parser("variance-study", help="variance/efficiency study")
    add_common(p)
    p.add_argument("--model")
    p.add_argument("--n", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--evals", type=int)

    p = sub.add_parser("optimal-n", help="optimal particle count")
    p.add_argument("--var-unit", dest="var_unit", type=float)
    p.add_argument("--tau1", type=float, default=0.0)
    p.add_argument("--tau2", type=float)
    p.add_argument("--out")

    for name in ("is2", "pmmh", "fit-proposal"):
        p = sub.add_parser(name)
        add_common(p)
        p.add_argument("--model")
        p.add_argument("--n", type=int)
        p.add_argument("--data")
        p.add_argument("--method", choices=["bootstrap", "eis", "peis"])
        p.add_argument("--particles", type=int)
        if name == "is2":
            p.add_argument("--draws", type=int)
        if name == "pmmh":
            p.add_argument("--iters", type=int)
            p.add_argument("--sampler", choices=["arw", "imh"])

    p = sub.add_parser("selftest", help="run the built-in property suite")

    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "loglik": _cmd_loglik,
    "variance-study": _cmd_variance_study,
    "optimal-n": _cmd_optimal_n,
    "is2": _cmd_is2,
    "pmmh": _cmd_pmmh,
    "fit-proposal": _cmd_fit_proposal,
    "selftest": _cmd_selftest,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except PeisError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                _write_json(Path(out) / "error.json", record)
            except OSError:
                pass
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
