"""Batch front end: one subcommand per experiment, CSV or JSON tables on output.

Configs are JSON objects::

    {"schema_version": 1,
     "profile": {"kind": "Model", "b_minus": 1, "b_plus": 2, "M": 2, "c": 1, "x0": 2},
     "potential": {"kind": "RadialPower", "amplitude": 1, "m": 4},
     "parameters": {"n": 1, "k": {"start": 100, "stop": 1000, "num": 10, "log": true}}}

Command-line flags override the file.  Exit status 2 flags an invalid
configuration, 3 a numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import ConfigError, IwatsukaError, NumericalFailure
from .fiber import REL_TOL, band_second_derivative, band_table, fh_derivative, solve_fiber
from .field import MagneticProfile
from .quasimode import build_quasimode, eigenfunction_distance, quasimode_residual, verify_expansion
from .spectral import (COUNTING_COLUMNS, Potential, birman_schwinger_kernel, counting_table, gap_energy,
                       volume_N0, weighted_volume)
from .threshold import EnergyWindow, current_bounds, threshold_report

SCHEMA_VERSION = 1
EXPERIMENTS = ("bands", "quasimode", "asympt", "current", "localize", "volume", "counting", "gap")

# experiment -> parameter names it reads (with defaults)
DEFAULTS: dict[str, dict[str, Any]] = {
    "bands": {"n": 1, "k": None, "method": "auto", "second_derivative": True},
    "quasimode": {"n": 1, "k": None},
    "asympt": {"n": 1, "k": None},
    "current": {"n": 1, "deltas": None, "ratio": 10.0},
    "localize": {"n": 1, "deltas": None, "nu": 1.5},
    "volume": {"lambdas": None},
    "counting": {"n": 1, "lambdas": None, "gap": False, "resolution": 1.0},
    "gap": {"n": 1, "lambdas": None, "sign": 1, "resolution": 1.0},
}
NEEDS_PROFILE = {"bands", "quasimode", "asympt", "current", "localize", "counting", "gap"}
NEEDS_POTENTIAL = {"volume", "counting", "gap"}


# -- parsing helpers -------------------------------------------------------

def parse_range(text: str) -> list[float]:
    """'1,2,3' or 'lin:a:b:num' or 'log:a:b:num'."""
    text = text.strip()
    try:
        if text.startswith(("lin:", "log:")):
            kind, a, b, num = text.split(":")
            return expand_range({"start": float(a), "stop": float(b), "num": int(num), "log": kind == "log"})
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse range {text!r}") from exc


def expand_range(spec: Any) -> list[float]:
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, list):
        return [float(v) for v in spec]
    if isinstance(spec, dict):
        try:
            start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"range needs start, stop, num: {spec}") from exc
        if num < 1:
            raise ConfigError("range num must be >= 1")
        if spec.get("log", False):
            if start <= 0 or stop <= 0:
                raise ConfigError("log range needs positive ends")
            return [float(v) for v in np.geomspace(start, stop, num)]
        return [float(v) for v in np.linspace(start, stop, num)]
    raise ConfigError(f"unsupported range value {spec!r}")


def _json_arg(text: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise ConfigError("expected a JSON object")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 2 with usage, as argparse does, but via our stream
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--threads", type=int, default=None, help="worker threads for fiber solves")
    common.add_argument("--tol", type=float, default=None,
                        help="relative certification tolerance of the finite-difference fiber route")
    common.add_argument("--profile", type=str, default=None, help="profile block as JSON")
    common.add_argument("--n", type=int, default=None, help="band index")

    parser = _Parser(prog="iwatsuka", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"iwatsuka {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, parents=[common])
        if name in ("bands", "quasimode", "asympt"):
            p.add_argument("--k", type=str, help="momenta: '1,2' or 'lin:a:b:num' or 'log:a:b:num'")
        if name in ("current", "localize"):
            p.add_argument("--deltas", type=str, help="offsets below the upper threshold")
        if name in NEEDS_POTENTIAL:
            p.add_argument("--potential", type=str, default=None, help="potential block as JSON")
            p.add_argument("--lambdas", type=str, help="spectral parameters")
        if name == "bands":
            p.add_argument("--method", choices=("auto", "galerkin", "fd"))
        if name == "localize":
            p.add_argument("--nu", type=float)
        if name == "current":
            p.add_argument("--ratio", type=float, help="window (delta, delta/ratio)")
        if name == "counting":
            p.add_argument("--gap", action="store_true", default=None, help="also run the gap count")
        if name in ("counting", "gap"):
            p.add_argument("--resolution", type=float, help="k-node density multiplier")
        if name == "gap":
            p.add_argument("--sign", type=int, choices=(1, -1))
    return parser


# -- config resolution -----------------------------------------------------

def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    raw: dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")
    exp = args.experiment
    if raw.get("experiment", exp) != exp:
        raise ConfigError(f"config is for experiment {raw['experiment']!r}, not {exp!r}")

    params = dict(DEFAULTS[exp])
    file_params = raw.get("parameters", {})
    if not isinstance(file_params, dict):
        raise ConfigError("parameters must be an object")
    unknown = set(file_params) - set(params)
    if unknown:
        raise ConfigError(f"unknown parameters for {exp}: {sorted(unknown)}")
    params.update(file_params)
    for key in params:
        flag = getattr(args, key, None)
        if flag is None:
            continue
        params[key] = parse_range(flag) if key in ("k", "deltas", "lambdas") else flag
    for key in ("k", "deltas", "lambdas"):
        if key in params:
            if params[key] is None:
                raise ConfigError(f"experiment {exp} needs '{key}'")
            params[key] = expand_range(params[key])
            if not params[key]:
                raise ConfigError(f"'{key}' is empty")
    if "n" in params and (not isinstance(params["n"], int) or params["n"] < 1):
        raise ConfigError("n must be a positive integer")

    profile_cfg = _json_arg(args.profile) if args.profile else raw.get("profile")
    potential_cfg = _json_arg(args.potential) if getattr(args, "potential", None) else raw.get("potential")
    if exp in NEEDS_PROFILE and profile_cfg is None:
        raise ConfigError("missing profile block")
    if exp in NEEDS_POTENTIAL and potential_cfg is None:
        raise ConfigError("missing potential block")
    out_cfg = raw.get("output", {}) if isinstance(raw.get("output", {}), dict) else {}
    fmt = args.format or out_cfg.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"output format must be csv or json, got {fmt!r}")
    settings = {"threads": args.threads if args.threads is not None else raw.get("threads", 1),
                "tol": args.tol if args.tol is not None else raw.get("tol", REL_TOL)}
    if not (isinstance(settings["threads"], int) and settings["threads"] >= 1):
        raise ConfigError("threads must be a positive integer")
    if not (isinstance(settings["tol"], (int, float)) and settings["tol"] > 0):
        raise ConfigError("tol must be positive")

    resolved = {"schema_version": SCHEMA_VERSION, "experiment": exp, "parameters": params,
                "settings": settings, "format": fmt}
    if profile_cfg is not None:
        resolved["profile"] = MagneticProfile.from_config(profile_cfg).to_config()
    if potential_cfg is not None:
        resolved["potential"] = Potential.from_config(potential_cfg).to_config()
    return resolved


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- experiments -----------------------------------------------------------

def _bands(profile, potential, p, s):
    table = band_table(profile, p["n"], p["k"], method=p["method"],
                       second_derivative=p["second_derivative"], rel_tol=s["tol"])
    return ["n", "k", "E", "dE", "d2E", "grid_points", "half_width"], table.rows()


def _quasimode(profile, potential, p, s):
    n = p["n"]
    rows = []
    for k in p["k"]:
        qm = build_quasimode(profile, n, k)
        pair = solve_fiber(profile, k, n)[n - 1]
        rows.append({"k": k, "x_k": qm.x_k, "b_k": qm.b_k, "alpha1": qm.alpha1, "alpha2": qm.alpha2,
                     "mu2": qm.mu2, "quasi_energy": qm.quasi_energy, "E": pair.energy,
                     "abs_diff": abs(pair.energy - qm.quasi_energy),
                     "eta": quasimode_residual(profile, qm, pair.grid.x),
                     "distance": eigenfunction_distance(profile, qm, pair)})
    return list(rows[0]), rows


def _asympt(profile, potential, p, s):
    n = p["n"]
    table = verify_expansion(profile, n, p["k"])
    rows = []
    for row in table.rows:
        pair = solve_fiber(profile, row.k, n)[n - 1]
        rows.append({"k": row.k, "E": row.E, "gap": pair.threshold_gap, "dE": fh_derivative(pair),
                     "d2E": band_second_derivative(profile, n, row.k), "r0": row.r0, "r1": row.r1,
                     "eps": row.eps, "ratio": row.ratio})
    return list(rows[0]), rows


def _current(profile, potential, p, s):
    rows = []
    for d in p["deltas"]:
        window = EnergyWindow(p["n"], d, d / p["ratio"] if p["ratio"] > 0 else 0.0)
        lo, hi = current_bounds(profile, window)
        rows.append({"delta1": window.delta1, "delta2": window.delta2, "current_lo": lo, "current_hi": hi})
    return ["delta1", "delta2", "current_lo", "current_hi"], rows


def _localize(profile, potential, p, s):
    rows = threshold_report(profile, p["n"], p["deltas"], p["nu"])
    return ["delta", "k_minus", "x_delta", "r_n", "mass_left", "current_lo", "current_hi"], rows


def _volume(profile, potential, p, s):
    rows = []
    for lam in p["lambdas"]:
        row = {"lambda": lam, "N0": volume_N0(potential, lam), "weighted_vol": None}
        if profile is not None:
            row["weighted_vol"] = weighted_volume(potential, profile, lam)
        rows.append(row)
    return ["lambda", "N0", "weighted_vol"], rows


def _counting(profile, potential, p, s):
    rows = counting_table(profile, potential, p["n"], p["lambdas"], gap=bool(p["gap"]),
                          resolution=p["resolution"], threads=s["threads"])
    return list(COUNTING_COLUMNS), rows


def _gap(profile, potential, p, s):
    rows = []
    sign = int(p["sign"])
    for lam in p["lambdas"]:
        energy = gap_energy(profile, p["n"], lam, sign)
        kernel = birman_schwinger_kernel(profile, potential, p["n"], lam, sign,
                                         resolution=p["resolution"], threads=s["threads"])
        count = int(np.count_nonzero(-sign * kernel.eigenvalues() > 1.0))
        rows.append({"lambda": lam, "energy": energy, "sign": sign, "count_gap": count,
                     "kernel_dim": kernel.dim})
    return ["lambda", "energy", "sign", "count_gap", "kernel_dim"], rows


RUNNERS: dict[str, Callable] = {
    "bands": _bands, "quasimode": _quasimode, "asympt": _asympt, "current": _current,
    "localize": _localize, "volume": _volume, "counting": _counting, "gap": _gap,
}


def run(config: dict[str, Any]) -> tuple[list[str], list[dict]]:
    """Execute a resolved config and return (columns, rows)."""
    profile = MagneticProfile.from_config(config["profile"]) if "profile" in config else None
    potential = Potential.from_config(config["potential"]) if "potential" in config else None
    return RUNNERS[config["experiment"]](profile, potential, config["parameters"], config["settings"])


# -- output ----------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    return v


def metadata(config: dict) -> dict:
    return {"tool": "iwatsuka", "version": __version__, "config_hash": config_hash(config),
            "settings": config["settings"],
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def render(config: dict, columns: list[str], rows: list[dict]) -> str:
    meta = metadata(config)
    if config["format"] == "json":
        body = {"metadata": meta, "config": config, "columns": columns,
                "rows": [{c: _plain(r[c]) for c in columns} for r in rows]}
        return json.dumps(body, indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
    buf.write("# config=" + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"iwatsuka: invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        columns, rows = run(config)
    except NumericalFailure as exc:
        print(f"iwatsuka: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (IwatsukaError, ValueError) as exc:
        print(f"iwatsuka: invalid parameters: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"iwatsuka: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    text = render(config, columns, rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
