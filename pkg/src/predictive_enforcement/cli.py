"""Command-line front end.

    predictive-enforcement <command> [--config FILE] [--out DIR] [--seed N] [--threads N]

Commands: solve, simulate, equilibrium, figures, validate, sweep.  The config
is a JSON object; every block is optional and unknown keys are rejected.
Outputs are collected in memory and only written once the command has
finished, so a failed run leaves no partial files behind.

Exit codes: 0 success, 1 invalid input or failed validation, 2 numerical failure.
The environment variables PREDICTIVE_ENFORCEMENT_OUT and
PREDICTIVE_ENFORCEMENT_THREADS supply defaults for --out and --threads.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import equilibrium as eq
from .hjb_solver import solve_cutoff
from .model_core import DomainError, ModelParams, NumericalError, derived
from .simulator import (PolicySpec, default_horizon, estimate_loss, max_dt, passive_learning_comparison,
                        set_threads, simulate_path)
from .stationary import stationary_distribution
from .validation import ValidationSettings, run_all

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
MAX_SEED = 2 ** 64 - 1

REFERENCE = {"lam": 4.0, "x": 1.0, "c": 1.5, "r": 2.0, "rho_L": 1.0, "rho_H": 1.0, "w": 0.0, "y_bar": 0.5}

NUM, INT, BOOL, STR, PARAMS, NUMLIST, INTLIST = "number", "integer", "boolean", "string", "params", "numbers", "integers"

SCHEMA = {
    "params": PARAMS,
    "seed": INT,
    "solve": {"grid_points": (INT, 401)},
    "simulate": {"policy": (STR, "optimal"), "y": (NUM, None), "p_hat": (NUM, None),
                 "hold_at_cutoff": (BOOL, True), "p0": (NUM, None), "n_paths": (INT, 10000),
                 "dt": (NUM, None), "horizon": (NUM, None), "dump_path": (BOOL, True),
                 "compare_passive": (BOOL, False)},
    "equilibrium": {"lam_values": (NUMLIST, None)},
    "figures": {"low_crime": (PARAMS, {"lam": 2.0}),
                "high_crime": (PARAMS, {"lam": 1.0, "c": 0.3}),
                "intermediate": (PARAMS, {}),
                "policy_points": (INT, 501), "cutoffs": (NUMLIST, [0.25, 0.35]),
                "cdf_points": (INT, 501), "x_points": (INT, 100)},
    "validate": {"criteria": (INTLIST, None), "settings": ("settings", {})},
    "sweep": {"parameter": (STR, "lam"), "values": (NUMLIST, None), "command": (STR, "solve")},
}
POLICIES = ("optimal", "myopic", "nonpredictive", "constant", "cutoff")
SWEEP_COMMANDS = ("solve", "equilibrium")


class ConfigError(DomainError):
    pass


# ---------------------------------------------------------------- config

def _check_type(where, kind, v):
    if kind == NUM:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(v)
    if kind == INT:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where} must be an integer")
        return v
    if kind == BOOL:
        if not isinstance(v, bool):
            raise ConfigError(f"{where} must be true or false")
        return v
    if kind == STR:
        if not isinstance(v, str):
            raise ConfigError(f"{where} must be a string")
        return v
    if kind in (NUMLIST, INTLIST):
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{where} must be a non-empty list")
        return [_check_type(f"{where}[{i}]", NUM if kind == NUMLIST else INT, u) for i, u in enumerate(v)]
    if kind == PARAMS:
        if not isinstance(v, dict):
            raise ConfigError(f"{where} must be an object")
        unknown = sorted(set(v) - set(REFERENCE))
        if unknown:
            raise ConfigError(f"{where}: unknown keys {unknown}")
        return {k: _check_type(f"{where}.{k}", NUM, u) for k, u in v.items()}
    if kind == "settings":
        if not isinstance(v, dict):
            raise ConfigError(f"{where} must be an object")
        ValidationSettings.from_dict(v)
        return dict(v)
    raise AssertionError(kind)


def load_config(path, command=None) -> dict:
    """Parse and validate a config file; returns fully defaulted blocks plus the model params."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    cfg = {"params": dict(REFERENCE), "seed": 0}
    if "params" in raw:
        cfg["params"].update(_check_type("params", PARAMS, raw["params"]))
    if "seed" in raw:
        cfg["seed"] = _check_seed(_check_type("seed", INT, raw["seed"]))
    for block, spec in SCHEMA.items():
        if not isinstance(spec, dict):
            continue
        given = raw.get(block, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{block} must be an object")
        bad = sorted(set(given) - set(spec))
        if bad:
            raise ConfigError(f"{block}: unknown keys {bad}")
        out = {}
        for key, (kind, default) in spec.items():
            v = given.get(key)
            out[key] = default if v is None else _check_type(f"{block}.{key}", kind, v)
        cfg[block] = out
    cfg["model"] = ModelParams(**cfg["params"])
    _check_blocks(cfg, command)
    return cfg


def _check_blocks(cfg, command=None):
    # shape is checked for every block; parameter-dependent checks only for the command that uses them
    def runs(name):
        return command is None or command == name

    sim = cfg["simulate"]
    if sim["policy"] not in POLICIES:
        raise ConfigError(f"simulate.policy must be one of {POLICIES}")
    if sim["policy"] == "constant" and sim["y"] is None:
        raise ConfigError("simulate.y is required for a constant policy")
    if sim["policy"] == "cutoff" and sim["p_hat"] is None:
        raise ConfigError("simulate.p_hat is required for a cutoff policy")
    if sim["n_paths"] < 2:
        raise ConfigError("simulate.n_paths must be at least 2")
    if runs("simulate") and sim["compare_passive"] and cfg["model"].w <= 0:
        raise ConfigError("simulate.compare_passive needs params.w > 0")
    sw = cfg["sweep"]
    if sw["parameter"] not in REFERENCE:
        raise ConfigError(f"sweep.parameter must be one of {sorted(REFERENCE)}")
    if sw["command"] not in SWEEP_COMMANDS:
        raise ConfigError(f"sweep.command must be one of {SWEEP_COMMANDS}")
    for v in (sw["values"] or []) if runs("sweep") else []:
        ModelParams(**{**cfg["params"], sw["parameter"]: v})
    for key in ("low_crime", "high_crime", "intermediate") if runs("figures") else ():
        ModelParams(**{**cfg["params"], **cfg["figures"][key]})
    fig = cfg["figures"]
    if min(fig["policy_points"], fig["cdf_points"], fig["x_points"], cfg["solve"]["grid_points"]) < 2:
        raise ConfigError("grid sizes must be at least 2")
    if len(fig["cutoffs"]) != 2 or not fig["cutoffs"][0] < fig["cutoffs"][1]:
        raise ConfigError("figures.cutoffs must be two increasing numbers")
    for n in cfg["validate"]["criteria"] or []:
        if not 1 <= n <= 12:
            raise ConfigError("validate.criteria entries must be in 1..12")


def _check_seed(seed):
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


# ---------------------------------------------------------------- output

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(u) for k, u in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(u) for u in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return v


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(out_dir: Path, files: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        tmp = out_dir / f".{name}.tmp"
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, out_dir / name)


# ---------------------------------------------------------------- commands

def cmd_solve(cfg, seed):
    P = cfg["model"]
    pol = solve_cutoff(P)
    p = np.linspace(0.0, 1.0, cfg["solve"]["grid_points"])
    V, Vp, L, D, y = pol.value(p), pol.slope(p), pol.loss(p), pol.delta(p), pol.action(p)
    return {
        "value_curve.csv": csv_text(["p", "value", "slope", "loss", "delta"], zip(p, V, Vp, L, D)),
        "policy.csv": csv_text(["p", "action"], zip(p, y)),
        "summary.json": json_text({"params": cfg["params"], **pol.summary()}),
    }


def _sim_policy(cfg):
    P, sim = cfg["model"], cfg["simulate"]
    d = derived(P)
    kind = sim["policy"]
    if kind == "optimal":
        pol = solve_cutoff(P)
        return PolicySpec.cutoff(pol.p_hat, sim["hold_at_cutoff"]), pol
    if kind == "myopic":
        return PolicySpec.cutoff(d.p_hat_M, sim["hold_at_cutoff"]), None
    if kind == "nonpredictive":
        return PolicySpec.constant(1.0 if d.pi0 > d.p_hat_M else 0.0), None
    if kind == "constant":
        return PolicySpec.constant(sim["y"]), None
    return PolicySpec.cutoff(sim["p_hat"], sim["hold_at_cutoff"]), None


def cmd_simulate(cfg, seed):
    P, sim = cfg["model"], cfg["simulate"]
    d = derived(P)
    policy, pol = _sim_policy(cfg)
    dt = sim["dt"] if sim["dt"] is not None else max_dt(P)
    horizon = sim["horizon"] if sim["horizon"] is not None else default_horizon(P)
    p0 = d.pi0 if sim["p0"] is None else sim["p0"]
    est = estimate_loss(policy, P, p0, sim["n_paths"], dt, horizon, seed)
    analytic = float(pol.loss(p0)) if pol is not None and P.w == 0 else math.nan
    files = {"loss_estimate.csv": csv_text(
        ["policy", "kind", "level", "p0", "n_paths", "dt", "horizon", "seed", "mean", "se",
         "mean_realized", "se_realized", "tail_bound", "analytic_loss"],
        [[sim["policy"], policy.kind, policy.y if policy.kind == "constant" else policy.p_hat, p0,
          sim["n_paths"], dt, horizon, seed, est.mean, est.se, est.mean_realized, est.se_realized,
          est.tail_bound, analytic]])}
    if sim["dump_path"]:
        rec = simulate_path(policy, P, dt, horizon, seed, p0)
        files["path.csv"] = rec.csv_text()
    if sim["compare_passive"]:
        rep = passive_learning_comparison(P, sim["n_paths"], dt, horizon, seed, p0)
        files["passive.csv"] = csv_text(
            ["w", "pi_w", "p_hat_M", "gp_should_win", "np_mean", "np_se", "gp_mean", "gp_se",
             "advantage", "advantage_se"],
            [[rep.w, rep.pi_w, rep.p_hat_M, rep.gp_should_win, rep.np_loss.mean, rep.np_loss.se,
              rep.gp_loss.mean, rep.gp_loss.se, rep.advantage, rep.advantage_se]])
    return files


EQ_COLUMNS = ["lam", "regime", "crime_x", "cutoff", "enforcement", "pm_loss", "threshold",
              "loss_at_pi0", "loss_stationary_avg", "enforcement_high"]


def _equilibrium_rows(P):
    rows = []
    for out in eq.all_regimes(P):
        r = out.as_row()
        rows.append([P.lam] + [r.get(k, math.nan) for k in EQ_COLUMNS[1:]])
    return rows


def cmd_equilibrium(cfg, seed):
    P = cfg["model"]
    lams = cfg["equilibrium"]["lam_values"] or [P.lam]
    rows = []
    for lam in lams:
        rows.extend(_equilibrium_rows(ModelParams(**{**cfg["params"], "lam": lam, "x": 1.0})))
    base = P.replace(x=1.0)
    thresholds = {"lambda_low": solve_cutoff(base).lambda_low, "lambda_bar": derived(base).lambda_bar,
                  "lambda_M": eq.lambda_M(base), "lambda_star": eq.lambda_star(base),
                  "commitment_reference_loss": eq.commitment_reference_loss(base)}
    return {"equilibrium.csv": csv_text(EQ_COLUMNS, rows),
            "thresholds.json": json_text({"params": cfg["params"], **thresholds})}


def _policy_map(P, n):
    pol = solve_cutoff(P)
    p = np.linspace(0.0, 1.0, n)
    body = csv_text(["p", "action", "value", "loss", "delta"],
                    zip(p, pol.action(p), pol.value(p), pol.loss(p), pol.delta(p)))
    return body, pol.summary()


def cmd_figures(cfg, seed):
    fig = cfg["figures"]
    files, summary = {}, {}
    for name, key in (("policy_low_crime", "low_crime"), ("policy_high_crime", "high_crime"),
                      ("policy_intermediate", "intermediate")):
        P = ModelParams(**{**cfg["params"], **fig[key]})
        files[f"{name}.csv"], summary[name] = _policy_map(P, fig["policy_points"])

    P = cfg["model"]
    q1, q2 = fig["cutoffs"]
    s1, s2 = stationary_distribution(q1, P), stationary_distribution(q2, P)
    p = np.linspace(0.0, 1.0, fig["cdf_points"])
    files["stationary_two_cutoffs.csv"] = csv_text(["p", f"Phi_{q1!r}", f"Phi_{q2!r}"], zip(p, s1.Phi(p), s2.Phi(p)))
    files["stationary_conditional.csv"] = csv_text(["p", "Phi", "Psi", "Upsilon"],
                                              zip(p, s1.Phi(p), s1.Psi(p), s1.Ups(p)))
    summary["stationary"] = {"cutoffs": [q1, q2], "atoms": [s1.atom_m, s2.atom_m], "means": [s1.mean, s2.mean]}

    xs = np.linspace(1.0 / fig["x_points"], 1.0, fig["x_points"])
    curves = eq.figure6_curves(P.replace(x=1.0), xs)
    files["cutoffs_vs_crime.csv"] = csv_text(["x", "p_hat_M", "p_hat", "p_bar"],
                                         zip(curves["x"], curves["p_hat_M"], curves["p_hat"], curves["p_bar"]))
    base = P.replace(x=1.0)
    lm, ls = eq.lambda_M(base), eq.lambda_star(base)
    x_gp, x_op = min(lm / P.lam, 1.0), min(ls / P.lam, 1.0)
    files["cutoff_intersections.csv"] = csv_text(
        ["regime", "x", "cutoff", "threshold"],
        [["GP", x_gp, P.c / (P.lam * x_gp), lm],
         ["OP", x_op, solve_cutoff(P.replace(x=x_op)).p_hat, ls]])
    files["figures_summary.json"] = json_text(summary)
    return files


def cmd_validate(cfg, seed, threads, seed_given):
    block = cfg["validate"]
    settings = ValidationSettings.from_dict(block["settings"])
    if seed_given:
        settings.seed = seed
    settings.threads = threads
    results = run_all(settings, block["criteria"])
    for r in results:
        print(r.line(), flush=True)
    rows = [[r.number, r.name, r.passed, r.seconds, json.dumps(_jsonable(r.measured), sort_keys=True),
             json.dumps(_jsonable(r.tolerance), sort_keys=True), r.error or ""] for r in results]
    files = {"validation_report.csv": csv_text(
                 ["criterion", "name", "passed", "seconds", "measured", "tolerance", "error"], rows),
             "validation_report.json": json_text([r.as_dict() for r in results])}
    if all(r.passed for r in results):
        code = EXIT_OK
    elif any(r.numerical_failure for r in results):
        code = EXIT_NUMERICAL
    else:
        code = EXIT_INVALID
    return files, code


SWEEP_SOLVE_COLUMNS = ["value", "case", "p_hat", "K_hat", "loss_at_pi0", "lambda_low", "lambda_bar",
                       "p_hat_M", "delta_at_cutoff"]


def _sweep_job(job):
    command, params = job
    P = ModelParams(**params)
    if command == "solve":
        s = solve_cutoff(P).summary()
        return [[s[k] for k in SWEEP_SOLVE_COLUMNS[1:]]]
    return [row[1:] for row in _equilibrium_rows(P)]


def cmd_sweep(cfg, seed, threads):
    sw = cfg["sweep"]
    if not sw["values"]:
        raise ConfigError("sweep.values is required")
    jobs = [(sw["command"], {**cfg["params"], sw["parameter"]: v,
                             **({"x": 1.0} if sw["command"] == "equilibrium" else {})})
            for v in sw["values"]]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = [[v] + r for v, res in zip(sw["values"], results) for r in res]
    header = SWEEP_SOLVE_COLUMNS if sw["command"] == "solve" else ["value"] + EQ_COLUMNS[1:]
    return {"sweep.csv": csv_text([sw["parameter"] if h == "value" else h for h in header], rows)}


# ---------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="predictive-enforcement",
                                 description="Optimal predictive enforcement: solver, simulator, equilibria.")
    ap.add_argument("command", choices=["solve", "simulate", "equilibrium", "figures", "validate", "sweep"])
    ap.add_argument("--config", type=Path, default=None, help="JSON scenario file")
    ap.add_argument("--out", type=Path, default=None, help="output directory (created if missing)")
    ap.add_argument("--seed", type=int, default=None, help="master RNG seed (unsigned 64-bit)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads")
    return ap


def _env_threads():
    v = os.environ.get("PREDICTIVE_ENFORCEMENT_THREADS")
    if v is None:
        return 1
    try:
        return int(v)
    except ValueError:
        raise ConfigError("PREDICTIVE_ENFORCEMENT_THREADS must be an integer") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
        seed = _check_seed(args.seed) if args.seed is not None else cfg["seed"]
        threads = args.threads if args.threads is not None else _env_threads()
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = args.out or Path(os.environ.get("PREDICTIVE_ENFORCEMENT_OUT", "out"))
        out = out.resolve()
        set_threads(threads)
        code = EXIT_OK
        if args.command == "validate":
            files, code = cmd_validate(cfg, seed, threads, args.seed is not None)
        elif args.command == "sweep":
            files = cmd_sweep(cfg, seed, threads)
        else:
            files = {"solve": cmd_solve, "simulate": cmd_simulate, "equilibrium": cmd_equilibrium,
                     "figures": cmd_figures}[args.command](cfg, seed)
        write_outputs(out, files)
        return code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DomainError, FloatingPointError) as exc:
        code = EXIT_NUMERICAL if isinstance(exc, FloatingPointError) else EXIT_INVALID
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
