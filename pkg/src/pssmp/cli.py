"""Command-line front end: one JSON config per run.

Exit codes: 0 success or all tests pass, 1 a statistical test failed,
2 invalid config or violated precondition, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path as FsPath

import jsonschema
import numpy as np

from . import io, levy, stats
from .errors import (ConfigError, ContractError, DomainError, DriverError, PreconditionError,
                     PssmpError)
from .sde import SolverParams

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("classify", "cramer", "simulate", "compare", "scaling-test", "besq-check")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
SOLVER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "h_max": _POS, "h_min": _POS, "z_floor": _NONNEG, "state_cap_m": _POS,
        "escalate": {"type": "boolean"}, "trunc_eps": _POS,
        "max_steps": {"type": "integer", "minimum": 1},
        "envelope_steps": {"type": "integer", "minimum": 0},
        "events_per_path": {"type": "integer", "minimum": 0},
    },
}
PROPERTIES = {
    "triplet": levy.TRIPLET_SCHEMA,
    "triplet_b": levy.TRIPLET_SCHEMA,
    "seed": {"type": "integer", "minimum": 0},
    "z0": _NONNEG,
    "horizon": _POS,
    "dt": _POS,
    "times": {"type": "array", "items": _NONNEG, "minItems": 1},
    "n_paths": {"type": "integer", "minimum": 1},
    "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "c": _POS,
    "t": _POS,
    "delta": _NONNEG,
    "absorb": {"type": "boolean"},
    "routes": {"type": "array", "items": {"enum": list(stats.ROUTES)}, "minItems": 2, "maxItems": 2},
    "solver": SOLVER_SCHEMA,
}
_SIM = ["seed", "z0", "n_paths", "solver"]
ALLOWED = {
    "classify": ["triplet"],
    "cramer": ["triplet"],
    "simulate": ["triplet", "horizon", "dt", "times", "absorb"] + _SIM,
    "compare": ["triplet", "triplet_b", "times", "alpha", "routes"] + _SIM,
    "scaling-test": ["triplet", "c", "t", "alpha"] + _SIM,
    "besq-check": ["delta", "times", "alpha"] + _SIM,
}
REQUIRED = {
    "classify": ["triplet"],
    "cramer": ["triplet"],
    "simulate": ["triplet", "seed", "z0", "n_paths"],
    "compare": ["triplet", "seed", "z0", "times", "n_paths"],
    "scaling-test": ["triplet", "seed", "z0", "c", "t", "n_paths"],
    "besq-check": ["delta", "seed", "z0", "times", "n_paths"],
}


def config_schema(command):
    return {
        "type": "object",
        "additionalProperties": False,
        "required": REQUIRED[command],
        "properties": {k: PROPERTIES[k] for k in ALLOWED[command]},
    }


def load_config(command, text):
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    errors = sorted(jsonschema.Draft202012Validator(config_schema(command)).iter_errors(cfg),
                    key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("config failed schema validation:\n  " + "\n  ".join(lines))
    if command == "simulate" and "times" not in cfg and not ("horizon" in cfg and "dt" in cfg):
        raise ConfigError("simulate needs either 'times' or both 'horizon' and 'dt'")
    env_seed = os.environ.get("PSSMP_SEED")
    if env_seed is not None and "seed" in ALLOWED[command]:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"PSSMP_SEED must be an integer, got {env_seed!r}") from exc
        if cfg["seed"] < 0:
            raise ConfigError("PSSMP_SEED must be non-negative")
    return cfg


def _params(cfg):
    return SolverParams(**cfg.get("solver", {}))


def _output_times(cfg):
    if "times" in cfg:
        return np.asarray(cfg["times"], dtype=float)
    return levy.make_grid(cfg["horizon"], cfg["dt"]) if cfg["dt"] < cfg["horizon"] else \
        np.array([0.0, cfg["horizon"]])


def _analysis(triplet):
    root = levy.cramer_root(triplet)
    return {
        "case": int(levy.classify_trichotomy(triplet)),
        "mean": levy.mean(triplet),
        "drift_coefficient": levy.drift_coefficient(triplet),
        "cramer_root": root,
    }


def cmd_classify(cfg, args):
    return _analysis(levy.LevyTriplet.from_dict(cfg["triplet"])), None, None


def cmd_cramer(cfg, args):
    tr = levy.LevyTriplet.from_dict(cfg["triplet"])
    root = levy.cramer_root(tr)
    return {"cramer_root": root,
            "psi_at_root": None if root is None else levy.laplace_exponent(tr, root),
            "drift_coefficient": levy.drift_coefficient(tr)}, None, None


def cmd_simulate(cfg, args):
    tr = levy.LevyTriplet.from_dict(cfg["triplet"])
    params = _params(cfg)
    times = _output_times(cfg)
    z0, n, seed = cfg["z0"], cfg["n_paths"], cfg["seed"]
    drift = levy.drift_coefficient(tr)
    warnings = []
    route = args.route
    if route == "lamperti":
        batch = stats.simulate_lamperti(tr, z0, times, n, params, seed, key=route,
                                        threads=args.threads)
        counters, t0 = batch.counters, batch.t0
    elif route == "sde":
        if drift <= 0:
            warnings.append("drift coefficient <= 0: paths are simulated up to their first zero only")
        batch = stats.simulate_sde(tr, z0, times, n, params, seed, key=route,
                                   absorb=cfg.get("absorb", False), threads=args.threads)
        counters, t0 = batch.counters, batch.t0
    else:
        run = stats.simulate_truncated_escalating if params.escalate else stats.simulate_truncated
        batch = run(tr, z0, times, n, params, seed, key=route, threads=args.threads)
        counters, t0 = batch.counters, batch.tau_m
    vals = batch.values
    report = {
        "route": route,
        "n_paths": n,
        "times": times,
        "mean_value": vals.mean(axis=0),
        "zero_fraction": (vals == 0).mean(axis=0),
        "counters": counters,
        "warnings": warnings,
        **_analysis(tr),
    }
    if route == "truncated":
        report["fraction_tau_m_before_horizon"] = float(np.mean(t0 <= times.max()))
    else:
        report["fraction_zero_before_horizon"] = float(np.mean(t0 <= times.max()))
    return report, (times, vals), None


def _compare(tr_a, tr_b, routes, cfg, args):
    params = _params(cfg)
    times = np.asarray(cfg["times"], dtype=float)
    alpha = cfg.get("alpha", 0.01)
    a = stats.sample_route(routes[0], tr_a, cfg["z0"], times, cfg["n_paths"], params,
                           cfg["seed"], args.threads, tag="a")
    b = stats.sample_route(routes[1], tr_b, cfg["z0"], times, cfg["n_paths"], params,
                           cfg["seed"], args.threads, tag="b")
    res = stats.law_equality_test(a, b, list(times), alpha)
    return {"routes": list(routes), "results": [r.to_json() for r in res],
            "pass": all(r.passed for r in res)}, (a, b)


def cmd_compare(cfg, args):
    tr = levy.LevyTriplet.from_dict(cfg["triplet"])
    tr_b = levy.LevyTriplet.from_dict(cfg["triplet_b"]) if "triplet_b" in cfg else tr
    routes = cfg.get("routes", ["lamperti", "sde_absorbed"])
    report, (a, b) = _compare(tr, tr_b, routes, cfg, args)
    return report, None, (routes, cfg["times"], a, b)


def cmd_scaling(cfg, args):
    tr = levy.LevyTriplet.from_dict(cfg["triplet"])
    res = stats.scaling_law_test(tr, cfg["z0"], cfg["c"], cfg["t"], cfg["n_paths"],
                                 cfg.get("alpha", 0.01), _params(cfg), cfg["seed"], args.threads)
    out = res.to_json()
    out.update(c=cfg["c"], t=cfg["t"], z0=cfg["z0"])
    return out, None, None


BESQ_PAIRS = (("lamperti", "sde_absorbed"), ("lamperti", "besq_absorbed"),
              ("sde_absorbed", "besq_absorbed"), ("sde", "besq"))


def cmd_besq_check(cfg, args):
    tr = levy.bessel_triplet(cfg["delta"])
    params = _params(cfg)
    times = np.asarray(cfg["times"], dtype=float)
    alpha = cfg.get("alpha", 0.01)
    samples = {r: stats.sample_route(r, tr, cfg["z0"], times, cfg["n_paths"], params, cfg["seed"],
                                     args.threads)
               for r in ("lamperti", "sde_absorbed", "besq_absorbed", "sde", "besq")}
    comparisons = []
    for ra, rb in BESQ_PAIRS:
        res = stats.law_equality_test(samples[ra], samples[rb], list(times), alpha)
        comparisons.append({"routes": [ra, rb], "results": [r.to_json() for r in res],
                            "pass": all(r.passed for r in res)})
    return {"delta": cfg["delta"], "comparisons": comparisons,
            "pass": all(c["pass"] for c in comparisons)}, None, None


HANDLERS = {"classify": cmd_classify, "cramer": cmd_cramer, "simulate": cmd_simulate,
            "compare": cmd_compare, "scaling-test": cmd_scaling, "besq-check": cmd_besq_check}


def build_parser():
    p = argparse.ArgumentParser(prog="pssmp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--route", choices=("lamperti", "sde", "truncated"), default="sde",
                   help="construction used by 'simulate'")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    return p


def _write_samples(path, routes, times, a, b):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("route,t,value\n")
        for name, arr in zip(routes, (a, b)):
            for k, t in enumerate(times):
                fh.writelines(f"{name},{float(t)!r},{float(v)!r}\n" for v in arr[:, k])


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = FsPath(args.out)
    try:
        text = FsPath(args.config).read_text(encoding="utf-8")
        cfg = load_config(args.command, text)
        if args.command != "simulate" and args.route != "sde":
            raise ConfigError("--route only applies to the simulate command")
        report, paths, samples = HANDLERS[args.command](cfg, args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, PreconditionError, DomainError, ContractError, DriverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PssmpError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out.mkdir(parents=True, exist_ok=True)
    echo = {"command": args.command, "config": cfg}
    if args.command == "simulate":
        echo["route"] = args.route
    echo["sha256"] = io.content_hash(echo)
    io.write_json(out / "config.echo.json", echo)
    io.write_json(out / "report.json", report)
    if paths is not None:
        io.write_paths_csv(out / "paths.csv", *paths)
    if samples is not None:
        _write_samples(out / "samples.csv", *samples)
    print(io.canonical_json({k: v for k, v in report.items()
                             if k not in ("times", "mean_value", "zero_fraction")}))
    return EXIT_FAIL if report.get("pass") is False else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
