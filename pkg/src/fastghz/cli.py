"""Command-line entry point: ``fastghz <command> [--config FILE] [overrides]``.

A run is configured by an optional YAML file plus flag overrides (flags
win).  The file holds the common keys ``out``, ``cache``, ``jobs`` and
``seed`` and at most one block per command, e.g.::

    out: results
    encode:
      N: 1024
      theta: 2.0
      tau1: 0.0505
      tau2: 0.111
      tau3: 0.0357

Every command prints one JSON summary line on stdout.  Artifacts carry the
config hash and package version; run timestamps go to ``<out>/run.log``.

Exit codes: 0 success, 2 invalid configuration, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .analysis import polarization_error, squeeze_scan
from .dicke import husimi
from .errors import NumericError
from .fullspace import append_disorder_rows, run_disordered_protocol, sample_disorder
from .optimizer import SweepSpec, optimize_full, run_sweep
from .propagator import generator_bank
from .protocol import (ProtocolParams, cnot_baseline_trace, export_husimi, fidelity_report,
                       run_protocol)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

COMMON_KEYS = {"out": str, "cache": str, "jobs": int, "seed": int}

_PROTOCOL = {"N": int, "theta": float, "tau1": float, "tau2": float, "tau3": float}

# key -> type; a tuple type means "list of"
SCHEMAS = {
    "encode": {**_PROTOCOL, "mode": str, "husimi": bool, "resolution": (int,)},
    "husimi": {**_PROTOCOL, "mode": str, "resolution": (int,), "format": str},
    "optimize": {"N": int, "theta": float, "tau1_step": float, "tau2_window": float,
                 "tau2_step": float, "min_step": float, "c": float},
    "sweep": {"n_values": (int,), "theta_values": (float,), "tau1_values": (float,),
              "tau2_values": (float,), "tau2_window": float, "tau2_step": float,
              "resume": bool, "allow_out_of_range": bool, "batch_size": int},
    "squeeze_scan": {"N": (int,), "tau_max": float, "points": int},
    "disorder": {**_PROTOCOL, "delta": float, "seeds": int, "reoptimize_tau3": bool},
    "baseline": {"N": (int,)},
}

DEFAULTS = {
    "encode": {"mode": "reduced", "husimi": False, "resolution": [128, 256]},
    "husimi": {"mode": "reduced", "resolution": [128, 256], "format": "csv"},
    "optimize": {"tau1_step": 0.005, "tau2_window": 0.02, "tau2_step": 0.002,
                 "min_step": 5e-4, "c": 2.0},
    "sweep": {"tau2_window": 0.02, "tau2_step": 0.002, "resume": True,
              "allow_out_of_range": False, "batch_size": 32},
    "squeeze_scan": {"tau_max": 0.2, "points": 201},
    "disorder": {"delta": 0.1, "seeds": 5, "reoptimize_tau3": False},
    "baseline": {},
}

REQUIRED = {
    "encode": ("N", "theta", "tau1", "tau2", "tau3"),
    "husimi": ("N", "theta", "tau1", "tau2", "tau3"),
    "optimize": ("N", "theta"),
    "sweep": ("n_values", "theta_values", "tau1_values"),
    "squeeze_scan": ("N",),
    "disorder": ("N", "theta"),
    "baseline": ("N",),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _coerce(key: str, value, kind):
    if isinstance(kind, tuple):
        items = value if isinstance(value, (list, tuple)) else [value]
        return [_coerce(key, v, kind[0]) for v in items]
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            f = float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
        if not f.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(f)
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
        if not math.isfinite(f):
            raise ConfigError(f"{key}: must be finite, got {value!r}")
        return f
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def resolve_config(command: str, raw: dict, overrides: dict) -> dict:
    """Validate the file contents and merge flag overrides into one flat config.

    Unknown keys anywhere in the file are rejected, including keys in the
    blocks of other commands, so a typo never silently falls back to a default.
    """
    section = command.replace("-", "_")
    for key, value in raw.items():
        if key in COMMON_KEYS:
            continue
        if key not in SCHEMAS:
            raise ConfigError(f"unknown key '{key}'")
        if not isinstance(value, dict):
            raise ConfigError(f"'{key}' must be a mapping")
        for sub in value:
            if sub not in SCHEMAS[key]:
                raise ConfigError(f"unknown key '{key}.{sub}'")
    schema = SCHEMAS[section]
    cfg = {"out": ".", "cache": None, "jobs": os.cpu_count() or 1, "seed": 0}
    cfg.update(DEFAULTS[section])
    for key, kind in COMMON_KEYS.items():
        if key in raw and raw[key] is not None:
            cfg[key] = _coerce(key, raw[key], kind)
    for key, value in (raw.get(section) or {}).items():
        cfg[key] = _coerce(f"{section}.{key}", value, schema[key])
    for key, value in overrides.items():
        if value is None:
            continue
        kind = COMMON_KEYS.get(key, schema.get(key))
        cfg[key] = _coerce(key, value, kind)
    missing = [k for k in REQUIRED[section] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required key '{section}.{missing[0]}'")
    if cfg["jobs"] < 1:
        raise ConfigError(f"jobs: must be >= 1, got {cfg['jobs']}")
    if cfg["seed"] < 0:
        raise ConfigError(f"seed: must be >= 0, got {cfg['seed']}")
    if "mode" in cfg and cfg["mode"] not in ("reduced", "two_branch"):
        raise ConfigError(f"mode: expected 'reduced' or 'two_branch', got {cfg['mode']!r}")
    if "format" in cfg and cfg["format"] not in ("csv", "binary"):
        raise ConfigError(f"format: expected 'csv' or 'binary', got {cfg['format']!r}")
    if "resolution" in cfg and len(cfg["resolution"]) != 2:
        raise ConfigError("resolution: expected [n_polar, n_azimuth]")
    return cfg


def config_hash(command: str, cfg: dict) -> str:
    """Hash of everything that affects results (output paths and parallelism excluded)."""
    payload = {k: v for k, v in cfg.items() if k not in ("out", "cache", "jobs")}
    blob = json.dumps({"command": command, "config": payload}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _meta(command: str, cfg: dict) -> dict:
    return {"command": command, "config_hash": config_hash(command, cfg), "version": __version__}


def _meta_line(meta: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in meta.items())


def _params(cfg: dict) -> ProtocolParams:
    return ProtocolParams(cfg["N"], cfg["theta"], cfg["tau1"], cfg["tau2"], cfg["tau3"])


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def cmd_encode(cfg: dict, out: Path, meta: dict) -> dict:
    params = _params(cfg)
    bank = generator_bank(params.N, cfg["cache"])
    trace = run_protocol(params, mode=cfg["mode"], bank=bank)
    report = fidelity_report(trace)
    path = out / "encode.json"
    _write_text(path, report.to_json(meta) + "\n")
    summary = {"epsilon": report.epsilon, "T": report.time_budget,
               "T_over_cnot": report.time_budget / (math.pi / 4), "report": str(path)}
    if cfg["husimi"]:
        paths = export_husimi(trace, out / "husimi", tuple(cfg["resolution"]), _meta_line(meta))
        summary["husimi"] = [str(p) for p in paths]
    return summary


def cmd_husimi(cfg: dict, out: Path, meta: dict) -> dict:
    params = _params(cfg)
    trace = run_protocol(params, mode=cfg["mode"], bank=generator_bank(params.N, cfg["cache"]))
    resolution = tuple(cfg["resolution"])
    if cfg["format"] == "csv":
        paths = export_husimi(trace, out / "husimi", resolution, _meta_line(meta))
    else:
        if cfg["mode"] != "reduced":
            raise ConfigError("format: binary output supports mode 'reduced' only")
        (out / "husimi").mkdir(parents=True, exist_ok=True)
        paths = []
        for i, (label, state) in enumerate(trace.checkpoints, start=1):
            path = out / "husimi" / f"husimi_{i}_{label.replace('/', '_')}.husq"
            husimi(state, resolution).to_binary(path)
            paths.append(path)
    return {"files": [str(p) for p in paths]}


def cmd_optimize(cfg: dict, out: Path, meta: dict) -> dict:
    bank = generator_bank(cfg["N"], cfg["cache"])
    opt = optimize_full(cfg["N"], cfg["theta"], bank=bank, tau1_step=cfg["tau1_step"],
                        tau2_window=cfg["tau2_window"], tau2_step=cfg["tau2_step"],
                        min_step=cfg["min_step"], c=cfg["c"])
    trace = run_protocol(opt.params, bank=bank)
    result = {"N": opt.N, "theta": opt.theta, "tau1": opt.tau1, "tau2": opt.tau2,
              "tau3": opt.tau3, "epsilon": opt.epsilon, "coarse_epsilon": opt.coarse_epsilon,
              "T": fidelity_report(trace).time_budget,
              "polarization_error": polarization_error(trace.final), "meta": meta}
    path = out / "optimize.json"
    _write_text(path, json.dumps(result, indent=2) + "\n")
    return {k: result[k] for k in ("tau1", "tau2", "tau3", "epsilon")} | {"report": str(path)}


def cmd_sweep(cfg: dict, out: Path, meta: dict) -> dict:
    spec = SweepSpec(tuple(cfg["n_values"]), tuple(cfg["theta_values"]), tuple(cfg["tau1_values"]),
                     tuple(cfg["tau2_values"]) if cfg.get("tau2_values") else None,
                     cfg["tau2_window"], cfg["tau2_step"], str(out / "sweep.csv"),
                     cfg["resume"], cfg["allow_out_of_range"])
    table = run_sweep(spec, jobs=cfg["jobs"], batch_size=cfg["batch_size"],
                      meta=_meta_line(meta), cache_dir=cfg["cache"])
    best = min(table.ordered(), key=lambda r: r[5])
    return {"cells": table.n_cells, "complete": table.complete, "best_epsilon": best[5],
            "csv": spec.output}


def cmd_squeeze_scan(cfg: dict, out: Path, meta: dict) -> dict:
    if cfg["points"] < 50:
        raise ConfigError(f"points: need at least 50, got {cfg['points']}")
    if not 0 < cfg["tau_max"] <= 0.25:
        raise ConfigError(f"tau_max: must lie in (0, 0.25], got {cfg['tau_max']}")
    grid = [cfg["tau_max"] * i / (cfg["points"] - 1) for i in range(cfg["points"])]
    rows = {}
    for n in cfg["N"]:
        scan = squeeze_scan(n, grid, bank=generator_bank(n, cfg["cache"]))
        path = out / f"squeeze_N{n}.csv"
        scan.to_csv(path, _meta_line(meta))
        rows[str(n)] = {"tau_min": scan.tau_min, "delta_y_min": scan.delta_y_min, "csv": str(path)}
    return {"scans": rows}


def cmd_disorder(cfg: dict, out: Path, meta: dict) -> dict:
    N = cfg["N"]
    taus = [cfg.get(k) for k in ("tau1", "tau2", "tau3")]
    if all(t is None for t in taus):
        params = optimize_full(N, cfg["theta"]).params
    elif any(t is None for t in taus):
        raise ConfigError("disorder: give all of tau1, tau2, tau3 or none of them")
    else:
        params = _params(cfg)
    path = out / "disorder.csv"
    if path.exists():
        path.unlink()
    reports = []
    for s in range(cfg["seeds"]):
        coupling = sample_disorder(N, cfg["delta"], cfg["seed"] + s)
        reports.append(run_disordered_protocol(params, coupling, cfg["reoptimize_tau3"]))
    append_disorder_rows(path, reports, _meta_line(meta))
    return {"rows": len(reports), "epsilon_clean": reports[0].epsilon_clean,
            "epsilon": [r.epsilon for r in reports], "leakage": [r.leakage for r in reports],
            "csv": str(path)}


def cmd_baseline(cfg: dict, out: Path, meta: dict) -> dict:
    results = []
    for n in cfg["N"]:
        trace = cnot_baseline_trace(n, bank=generator_bank(n, cfg["cache"]))
        report = fidelity_report(trace)
        results.append({"N": n, "epsilon": report.epsilon, "T": report.time_budget})
    path = out / "baseline.json"
    _write_text(path, json.dumps({"results": results, "meta": meta}, indent=2) + "\n")
    worst = max(r["epsilon"] for r in results)
    return {"epsilon": worst, "T": math.pi / 4, "results": results, "report": str(path)}


COMMANDS = {
    "encode": cmd_encode, "husimi": cmd_husimi, "optimize": cmd_optimize, "sweep": cmd_sweep,
    "squeeze-scan": cmd_squeeze_scan, "disorder": cmd_disorder, "baseline": cmd_baseline,
}

_FLAG_HELP = {"N": "number of ensemble qubits", "theta": "C_phi strength, phi = theta ln^2 N / N"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastghz", description="Fast GHZ-encoding simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--cache", help="spectral cache directory")
        p.add_argument("--jobs", type=int, help="worker threads")
        p.add_argument("--seed", type=int, help="base seed")
        for key, kind in SCHEMAS[name.replace("-", "_")].items():
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
            elif isinstance(kind, tuple):
                p.add_argument(flag, dest=key, nargs="+", default=None, help=_FLAG_HELP.get(key))
            else:
                p.add_argument(flag, dest=key, default=None, help=_FLAG_HELP.get(key))
    return parser


def _log(out: Path, command: str, meta: dict, status: str) -> None:
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with open(out / "run.log", "a") as fh:
        fh.write(f"{stamp} {command} config_hash={meta['config_hash']} "
                 f"version={meta['version']} status={status}\n")


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    out = None
    try:
        raw = load_config(config_path) if config_path else {}
        cfg = resolve_config(command, raw, args)
        meta = _meta(command, cfg)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[command](cfg, out, meta)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # parameter validation inside the library (ranges, capacity)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _log(out, command, meta, "ok")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps({"command": command, "status": "ok", **summary, "meta": meta}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
