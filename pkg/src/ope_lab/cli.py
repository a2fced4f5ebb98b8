"""``ope-lab`` command line: build, sample, evaluate, diagnose and sweep.

Every subcommand takes ``--config FILE`` (flat ``key=value`` lines) and one
``--<key>`` flag per config key; flags override the file.  Outputs are CSV
files plus a ``summary.txt`` of ``key=value`` lines in ``--out``.

Exit status: 0 on success, 1 on validation failure, 2 on numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .diagnostics import audit, audit_assumptions, concentration_check, empirical_covariances
from .features import (FeatureSystem, exact_covariance, exact_next_covariance,
                       one_hot_features)
from .hard_instance import HardInstanceSpec, InstanceParameterError, build, describe_states
from .io import (ConfigError, atomic_write, config_hash, csv_text, feature_rows,
                 feature_schema, key_value_text, read_dataset, read_features, read_key_values)
from .lower_bound import (DistinguishTask, growth_ratio_sweep, monte_carlo_trial,
                          exact_bayes_error, required_n_for_error)
from .lspe import (LspeConfig, default_iterations, regularization_lambda, run_lspe,
                   theorem2_bound)
from .mdp import FiniteMdp, Policy, exact_values, random_mdp, validate
from .sampling import derive_seed, sample_dataset

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
REQUIRED = object()


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str
    type_name: str


def key(parse, default=REQUIRED, help="", type_name=None):
    return Key(parse, default, help, type_name or getattr(parse, "__name__", "value"))


INSTANCE_KEYS = {
    "gamma": key(float, help="discount factor in (0,1)"),
    "m": key(int, None, "states per level (omit when b is given)"),
    "L": key(int, None, "number of levels (omit when b is given)"),
    "b": key(float, None, "base b > 1; derives m = ceil(b/gamma^2), L = d/m"),
    "d": key(int, None, "feature dimension, required with b"),
    "q": key(float, 1.0, "coverage parameter in [gamma^2, 1]"),
    "eps": key(float, 0.1, "target accuracy in (0, 1/2]"),
    "r0_zero": key(_bool, False, "use r0 = 0 instead of the nonzero hypothesis", "bool"),
}
OUT = {"out": key(str, help="output directory", type_name="path")}
WORKERS = {"workers": key(int, None, "worker processes (default: CPU count)")}

SCHEMAS: dict[str, dict[str, Key]] = {
    "instance": {**INSTANCE_KEYS, "eta": key(float, 0.5, "slack eta in (0,1]"), **OUT},
    "sample": {**INSTANCE_KEYS, "n": key(int, help="number of records"),
               "seed": key(int, help="dataset seed"), **OUT},
    "lspe": {**INSTANCE_KEYS,
             "dataset": key(str, None, "dataset CSV (otherwise sampled from n, seed)", "path"),
             "features": key(str, None, "feature CSV overriding the instance features", "path"),
             "n": key(int, None, "records to sample when no dataset is given"),
             "seed": key(int, None, "seed when sampling"),
             "T": key(int, None, "iterations (default from beta, else 100)"),
             "eta": key(float, 0.5, "slack eta in (0,1]"),
             "delta": key(float, 0.1, "failure probability in (0,1)"),
             "lam": key(float, None, "ridge override (default: schedule)"),
             "target": key(int, None, "target state (default: instance target)"),
             **OUT},
    "diagnose": {**INSTANCE_KEYS, "n": key(int, help="records per dataset"),
                 "seed": key(int, help="master seed"),
                 "datasets": key(int, 1, "number of seeded datasets"),
                 "delta": key(float, 0.05, "failure probability in (0,1)"),
                 "eta": key(float, 0.5, "slack eta in (0,1]"), **OUT},
    "lower-sweep": {"gamma": key(float, help="discount factor"),
                    "m": key(int, help="states per level"),
                    "q": key(float, 1.0, "coverage parameter"),
                    "eps": key(float, 0.1, "target accuracy"),
                    "target_error": key(float, 0.1, "Bayes error target for N*"),
                    "L_min": key(int, 2, "smallest depth"),
                    "L_max": key(int, 8, "largest depth"),
                    "mc_L": key(int, 2, "depth used for Monte-Carlo trials"),
                    "mc_targets": key(_float_list, [0.25], "error targets defining MC sizes",
                                      "float list"),
                    "mc_trials": key(int, 2000, "trials per Monte-Carlo size"),
                    "seed": key(int, help="master seed"), **WORKERS, **OUT},
    "upper-sweep": {"model": key(str, "tabular", "'tabular' (random one-hot MDPs) or 'scalar'",
                                 "choice"),
                    "gamma": key(float, 0.5, "discount factor"),
                    "n_states": key(int, 8, "states of the random tabular MDPs"),
                    "n_actions": key(int, 1, "actions per state of the random MDPs"),
                    "instances": key(int, 1, "random MDPs to draw"),
                    "reward_scale": key(float, 1.0, "mean rewards uniform on [-s, s]"),
                    "n_list": key(_int_list, [1000, 10000, 100000], "dataset sizes", "int list"),
                    "T_list": key(_int_list, None, "iteration counts (default: from beta)",
                                  "int list"),
                    "seeds": key(int, 10, "datasets per cell"),
                    "eta": key(float, 0.5, "slack eta"),
                    "delta": key(float, 0.1, "failure probability"),
                    "lam": key(float, None, "ridge override (default: schedule)"),
                    "seed": key(int, help="master seed"), **WORKERS, **OUT},
}


def parse_config(command: str, file_items: dict[str, str] | None = None,
                 flag_items: dict[str, str] | None = None) -> dict[str, Any]:
    """Merge file and flag values (flags win), reject unknown keys, convert types."""
    schema = SCHEMAS[command]
    raw = dict(file_items or {})
    raw.update({k: v for k, v in (flag_items or {}).items() if v is not None})
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    cfg: dict[str, Any] = {}
    for name, spec in schema.items():
        if name in raw:
            try:
                cfg[name] = spec.parse(raw[name])
            except ValueError:
                raise ConfigError(
                    f"key {name!r}: expected {spec.type_name}, got {raw[name]!r}") from None
        elif spec.default is REQUIRED:
            raise ConfigError(f"missing required key {name!r} ({spec.type_name})")
        else:
            cfg[name] = spec.default
    _check_ranges(command, cfg)
    return cfg


def _check_ranges(command: str, cfg: dict):
    checks = [
        ("gamma", lambda v: 0 < v < 1, "0 < gamma < 1"),
        ("eta", lambda v: 0 < v <= 1, "eta in (0,1]"),
        ("delta", lambda v: 0 < v < 1, "delta in (0,1)"),
        ("n", lambda v: v >= 0, "n >= 0"),
        ("T", lambda v: v >= 1, "T >= 1"),
        ("lam", lambda v: v >= 0, "lambda >= 0"),
        ("target_error", lambda v: 0 < v <= 0.5, "target_error in (0, 0.5]"),
        ("mc_trials", lambda v: v >= 1, "mc_trials >= 1"),
        ("seeds", lambda v: v >= 1, "seeds >= 1"),
        ("datasets", lambda v: v >= 1, "datasets >= 1"),
        ("workers", lambda v: v >= 1, "workers >= 1"),
    ]
    for name, ok, text in checks:
        if cfg.get(name) is not None and not ok(cfg[name]):
            raise ConfigError(f"key {name!r}={cfg[name]!r} violates {text}")
    if command == "upper-sweep" and cfg["model"] not in ("tabular", "scalar"):
        raise ConfigError("key 'model' must be 'tabular' or 'scalar'")
    if command == "lower-sweep":
        if cfg["L_max"] < cfg["L_min"] or cfg["L_min"] < 1:
            raise ConfigError("need 1 <= L_min <= L_max")
        HardInstanceSpec(cfg["gamma"], cfg["m"], cfg["L_min"], cfg["q"], cfg["eps"])
        HardInstanceSpec(cfg["gamma"], cfg["m"], cfg["mc_L"], cfg["q"], cfg["eps"])
    if "r0_zero" in cfg:
        instance_spec(cfg)


def instance_spec(cfg: dict) -> HardInstanceSpec:
    common = dict(q=cfg["q"], eps=cfg["eps"], r0_is_zero=cfg["r0_zero"])
    if cfg["b"] is not None:
        if cfg["d"] is None:
            raise ConfigError("key 'd' is required together with 'b'")
        return HardInstanceSpec.from_b(cfg["gamma"], cfg["b"], cfg["d"], **common)
    if cfg["m"] is None or cfg["L"] is None:
        raise ConfigError("give either (m, L) or (b, d)")
    return HardInstanceSpec(cfg["gamma"], cfg["m"], cfg["L"], **common)


# keys that change where or how fast a run happens but not what it computes
UNHASHED_KEYS = ("workers", "out")


def summary_header(command: str, cfg: dict, seed=None) -> dict:
    hashed = {k: v for k, v in cfg.items() if k not in UNHASHED_KEYS}
    head = {"command": command, "version": __version__, "config_hash": config_hash(hashed)}
    if seed is not None:
        head["seed"] = seed
    return head


def _map(fn, items, workers):
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _workers(cfg) -> int:
    return cfg.get("workers") or os.cpu_count() or 1


# --- subcommands: each returns {filename: text}; nothing is written until all succeed


def cmd_instance(cfg):
    bundle = build(instance_spec(cfg))
    spec = bundle.spec
    au = audit_assumptions(bundle, cfg["eta"])
    values = exact_values(bundle.mdp, bundle.policy)
    lam = exact_covariance(bundle.features, bundle.mu).matrix
    summary = summary_header("instance", cfg)
    summary.update({
        "n_states": spec.n_states, "d": spec.d, "m": spec.m, "L": spec.L, "p": spec.p,
        "r0": spec.r0, "target_state": bundle.target_state,
        "target_value": values.v[bundle.target_state],
        "validate_violations": len(validate(bundle.mdp)),
        "lambda_is_scaled_identity": bool(np.allclose(lam, lam[0, 0] * np.eye(spec.d),
                                                      atol=1e-12, rtol=0)),
        "lambda_scale": lam[0, 0],
    })
    summary.update(au.as_dict())
    states = describe_states(bundle)
    return {
        "instance.csv": csv_text(states, ("state_id", "group", "l", "i", "reward_spec",
                                          "next_state")),
        "features.csv": csv_text(feature_rows(bundle.features), feature_schema(spec.d)),
        "summary.txt": key_value_text(summary),
    }


def cmd_sample(cfg):
    bundle = build(instance_spec(cfg))
    ds = sample_dataset(bundle.mdp, bundle.mu, cfg["n"], cfg["seed"])
    rows = [(i, s, a, r, sn) for i, (s, a, r, sn) in enumerate(ds.records())]
    meta = {"gamma": bundle.spec.gamma, "d": bundle.spec.d, "seed": ds.seed, "n": ds.n,
            "instance_hash": ds.source}
    summary = summary_header("sample", cfg, cfg["seed"])
    summary.update(meta)
    return {
        "dataset.csv": csv_text(rows, ("idx", "state", "action", "reward", "next_state")),
        "dataset.csv.meta": key_value_text(meta),
        "summary.txt": key_value_text(summary),
    }


def cmd_lspe(cfg):
    bundle = build(instance_spec(cfg))
    fs = read_features(cfg["features"]) if cfg["features"] else bundle.features
    if cfg["dataset"]:
        ds, _ = read_dataset(cfg["dataset"])
    elif cfg["n"] is not None and cfg["seed"] is not None:
        ds = sample_dataset(bundle.mdp, bundle.mu, cfg["n"], cfg["seed"])
    else:
        raise ConfigError("lspe needs either 'dataset' or both 'n' and 'seed'")
    n_states = len(fs.n_actions)
    if ds.n and (ds.states.max() >= n_states or ds.next_states.max() >= n_states):
        raise ConfigError("dataset refers to states outside the feature table")
    policy = Policy.uniform(fs.n_actions)
    target = bundle.target_state if cfg["target"] is None else cfg["target"]
    gamma = bundle.spec.gamma
    au = audit_assumptions(bundle, cfg["eta"])
    T = cfg["T"] or default_iterations(bundle.spec.eps,
                                       au.shift.beta if au.shift.bound_applicable else None)
    lam = cfg["lam"] if cfg["lam"] is not None else regularization_lambda(
        ds.n, fs.dim, cfg["delta"], cfg["eta"])
    run = run_lspe(ds, fs, policy, gamma, LspeConfig(lam, T, cfg["eta"], cfg["delta"]), target)
    truth = exact_values(bundle.mdp, bundle.policy).v[target]
    summary = summary_header("lspe", cfg, ds.seed)
    summary.update({"n": ds.n, "d": fs.dim, "lambda": lam, "T": T, "target_state": target,
                    "estimate": run.estimate, "truth": truth,
                    "abs_error": abs(run.estimate - truth),
                    "shift_c": au.shift.c, "shift_c0": au.shift.c0, "beta": au.shift.beta,
                    "bound_applicable": au.shift.bound_applicable})
    if au.shift.bound_applicable and ds.n >= 1:
        summary["bound_sq_error"] = theorem2_bound(
            au.shift.c, au.shift.c0, cfg["eta"], gamma, fs.dim, cfg["delta"], ds.n, T,
            float(np.linalg.norm(bundle.theta)))
    trace = [(t, float(np.linalg.norm(th)), est)
             for t, (th, est) in enumerate(zip(run.theta_trace, run.target_trace))]
    return {"trace.csv": csv_text(trace, ("t", "theta_norm", "estimate")),
            "summary.txt": key_value_text(summary)}


def cmd_diagnose(cfg):
    bundle = build(instance_spec(cfg))
    lam = exact_covariance(bundle.features, bundle.mu).matrix
    lam_bar = exact_next_covariance(bundle.mdp, bundle.features, bundle.policy,
                                    bundle.mu).matrix
    rows = []
    for j in range(cfg["datasets"]):
        seed = cfg["seed"] if cfg["datasets"] == 1 else derive_seed(cfg["seed"], j)
        ds = sample_dataset(bundle.mdp, bundle.mu, cfg["n"], seed)
        rep = concentration_check(empirical_covariances(ds, bundle.features, bundle.policy),
                                  lam, lam_bar, cfg["delta"])
        rows.append((seed, ds.n, rep.dev, rep.dev_bar, rep.threshold, rep.passed, rep.margin))
    au = audit_assumptions(bundle, cfg["eta"])
    summary = summary_header("diagnose", cfg, cfg["seed"])
    summary.update({"datasets": cfg["datasets"], "threshold": rows[0][4],
                    "fail_fraction": sum(not r[5] for r in rows) / len(rows)})
    summary.update(au.as_dict())
    return {"concentration.csv": csv_text(rows, ("seed", "n", "dev_lambda", "dev_lambda_bar",
                                                 "threshold", "passed", "margin")),
            "summary.txt": key_value_text(summary)}


def _trial_cell(args):
    task, n, seed = args
    return monte_carlo_trial(task, n, seed).correct


def cmd_lower_sweep(cfg):
    workers = _workers(cfg)
    sweep = growth_ratio_sweep(cfg["gamma"], cfg["m"], cfg["q"], cfg["eps"],
                               cfg["target_error"], range(cfg["L_min"], cfg["L_max"] + 1))
    task = DistinguishTask(cfg["gamma"], cfg["m"], cfg["mc_L"], cfg["q"], cfg["eps"])
    mc_rows = []
    for j, target in enumerate(cfg["mc_targets"]):
        n = required_n_for_error(task, target)
        if not math.isfinite(n):
            raise ConfigError("Monte-Carlo sizes are infinite at q = gamma^2")
        cells = [(task, n, derive_seed(cfg["seed"], j, t)) for t in range(cfg["mc_trials"])]
        correct = _map(_trial_cell, cells, workers)
        exact = exact_bayes_error(task, task.informative_count(n))
        mc_rows.append((n, 1 - sum(correct) / len(correct), exact,
                        math.sqrt(exact * (1 - exact) / len(correct))))
    summary = summary_header("lower-sweep", cfg, cfg["seed"])
    summary["rows"] = len(sweep)
    return {
        "sweep.csv": csv_text([(r.L, r.d, r.n_star, r.ratio, r.predicted_ratio) for r in sweep],
                              ("L", "d", "N_star", "ratio", "predicted_ratio")),
        "montecarlo.csv": csv_text(mc_rows, ("n", "empirical_error", "exact_error", "se")),
        "summary.txt": key_value_text(summary),
    }


def scalar_mdp(gamma: float) -> tuple[FiniteMdp, FeatureSystem]:
    """One state, one action, reward 1, self-loop, feature 1."""
    mdp = FiniteMdp.deterministic([0], [1.0], gamma)
    return mdp, FeatureSystem(mdp.n_actions, np.ones((1, 1)))


def _upper_cell(args):
    mdp, fs, policy, mu, n, T_list, lam, eta, delta, seed, inst = args
    ds = sample_dataset(mdp, mu, n, seed)
    truth = exact_values(mdp, policy)
    au = audit(mdp, policy, fs, truth.q, mu, 0, eta)
    if lam is None:
        lam = regularization_lambda(n, fs.dim, delta, eta)
    if T_list is None:
        T_list = [default_iterations(0.1, au.shift.beta if au.shift.bound_applicable else None)]
    run = run_lspe(ds, fs, policy, mdp.gamma, LspeConfig(lam, max(T_list), eta, delta), 0)
    rows = []
    for T in T_list:
        est = float(run.target_trace[T])
        err = est - truth.v[0]
        bound = math.nan
        if au.shift.bound_applicable and n >= 1:
            bound = theorem2_bound(au.shift.c, au.shift.c0, eta, mdp.gamma, fs.dim, delta, n, T,
                                   float(np.linalg.norm(truth.q)))
        rows.append((inst, n, T, seed, lam, est, truth.v[0], abs(err), err**2, bound))
    return rows


def cmd_upper_sweep(cfg):
    gamma = cfg["gamma"]
    models = []
    if cfg["model"] == "scalar":
        mdp, fs = scalar_mdp(gamma)
        models.append((mdp, fs, Policy.uniform(mdp.n_actions)))
    else:
        for i in range(cfg["instances"]):
            rng = np.random.default_rng(derive_seed(cfg["seed"], 0, i))
            mdp = random_mdp(cfg["n_states"], cfg["n_actions"], gamma, rng,
                             reward_scale=cfg["reward_scale"])
            models.append((mdp, one_hot_features(mdp.n_actions),
                           Policy.uniform(mdp.n_actions)))
    cells = []
    for i, (mdp, fs, policy) in enumerate(models):
        mu = np.full(mdp.n_pairs, 1 / mdp.n_pairs)
        for n in cfg["n_list"]:
            for k in range(cfg["seeds"]):
                cells.append((mdp, fs, policy, mu, n, cfg["T_list"], cfg["lam"], cfg["eta"],
                              cfg["delta"], derive_seed(cfg["seed"], 1, i, n, k), i))
    rows = [r for chunk in _map(_upper_cell, cells, _workers(cfg)) for r in chunk]
    summary = summary_header("upper-sweep", cfg, cfg["seed"])
    summary["rows"] = len(rows)
    return {"upper.csv": csv_text(rows, ("instance", "n", "T", "seed", "lambda", "estimate",
                                         "truth", "abs_error", "sq_error", "bound")),
            "summary.txt": key_value_text(summary)}


COMMANDS = {"instance": cmd_instance, "sample": cmd_sample, "lspe": cmd_lspe,
            "diagnose": cmd_diagnose, "lower-sweep": cmd_lower_sweep,
            "upper-sweep": cmd_upper_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ope-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value configuration file")
        for k, spec in schema.items():
            default = "required" if spec.default is REQUIRED else spec.default
            p.add_argument(f"--{k.replace('_', '-')}", dest=k, default=None,
                           metavar=spec.type_name.upper().replace(" ", "_"),
                           help=f"{spec.help} [{default}]")
    return parser


def run_command(command: str, cfg: dict) -> dict[str, str]:
    return COMMANDS[command](cfg)


def _write_outputs(out: Path, files: dict[str, str]):
    for name, text in files.items():
        atomic_write(out / name, text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: getattr(args, k) for k in SCHEMAS[args.command]}
    try:
        file_items = read_key_values(args.config) if args.config else {}
        cfg = parse_config(args.command, file_items, flags)
        out = Path(cfg["out"])
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output path {out} exists and is not a directory")
        files = run_command(args.command, cfg)
    except (ConfigError, InstanceParameterError, FileNotFoundError) as exc:
        print(f"ope-lab: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        print(f"ope-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    try:
        _write_outputs(out, files)
    except OSError as exc:
        print(f"ope-lab: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
