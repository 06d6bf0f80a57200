"""Command-line front end: ``roughheat {simulate,converge,driver-stats}``.

Configs are YAML mappings. ``--set a.b=value`` overrides are merged in
before validation (values are parsed as YAML scalars). Every output file
name carries a digest of the resolved config, so reruns overwrite in place.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__, io
from .convergence import PlanError, StudyPlan, median_table, run_study, strictly_decreasing
from .driver import approximation_study, sample_fbm
from .schemes import NONLINEARITIES, NonFiniteError, RegularityWarning, SchemeConfig, make_nonlinearity, run
from .spectral import grid_points, sine_series_state

log = logging.getLogger("roughheat")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_IO = 0, 2, 3, 4

# Physical defaults: kappa = 100,
# psi = sin(pi x)/2 + 3 sin(3 pi x)/5, one driver component, f_k with k = 1.
DEFAULT_PSI = [0.5, 0.0, 0.6]

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_HURST = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

NONLINEARITY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"enum": sorted(NONLINEARITIES)},
        "k": _NUM,
        "c": _NUM,
        "a": _NUM,
    },
}

SIMULATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scheme", "hurst", "time_mesh", "modes"],
    "properties": {
        "scheme": {"enum": ["euler", "milstein"]},
        "hurst": _HURST,
        "time_mesh": _INT1,
        "modes": _INT1,
        "kappa": _POS,
        "gamma": _NUM,
        "gamma_prime": _NUM,
        "seed": {"type": "integer", "minimum": 0},
        "components": _INT1,
        "oversample": _INT1,
        "grid_size": _INT1,
        "nonlinearity": NONLINEARITY_SCHEMA,
        "initial_condition": {"type": "array", "items": _NUM, "minItems": 1},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "view": {"enum": ["spectral", "grid"]},
                "grid_size": _INT1,
                "stride": _INT1,
                "probes": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                           "minItems": 1},
            },
        },
    },
}

CONVERGE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scheme", "hurst", "gamma", "gamma_prime"],
    "properties": {
        "scheme": {"enum": ["euler", "milstein"]},
        "hurst": _HURST,
        "gamma": _NUM,
        "gamma_prime": _NUM,
        "beta": _POS,
        "lam": _POS,
        "mesh_ladder": {"type": "array", "items": _INT1, "minItems": 1},
        "mode_ladder": {"type": "array", "items": _INT1, "minItems": 1},
        "ref_mesh": _INT1,
        "ref_modes": _INT1,
        "replications": _INT1,
        "seed": {"type": "integer", "minimum": 0},
        "kappa": _POS,
        "nonlinearity": NONLINEARITY_SCHEMA,
        "components": _INT1,
        "oversample": _INT1,
        "shared_grid": {"type": "boolean"},
        "time_ladder_modes": _INT1,
        "space_ladder_mesh": _INT1,
        "drop_finest": {"type": "boolean"},
        "tolerance": _POS,
        "compare_with": {"enum": ["euler", "milstein"]},
    },
}

DRIVER_STATS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["hurst", "gamma"],
    "properties": {
        "hurst": _HURST,
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "fine_mesh": _INT1,
        "meshes": {"type": "array", "items": _INT1, "minItems": 1},
        "seeds": _INT1,
        "seed": {"type": "integer", "minimum": 0},
        "components": _INT1,
    },
}

SCHEMAS = {"simulate": SIMULATE_SCHEMA, "converge": CONVERGE_SCHEMA, "driver-stats": DRIVER_STATS_SCHEMA}


class ConfigError(ValueError):
    pass


class StudyFailed(RuntimeError):
    """Every cell of a study blew up."""


# --- config handling ----------------------------------------------------------


def parse_override(text: str) -> tuple[list[str], object]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"--set {key}: cannot parse value {raw!r}: {exc}") from None
    return key.strip().split("."), value


def apply_overrides(config: dict, overrides) -> dict:
    out = copy.deepcopy(config)
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"--set {'.'.join(path)}: {part!r} is not a section")
            node = child
        node[path[-1]] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return data


def validate(command: str, config: dict):
    validator = jsonschema.Draft7Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<top level>"
        if err.validator == "required":
            missing = [f for f in err.validator_value if f not in err.instance]
            raise ConfigError(f"missing required field {missing[0]!r} in {where}")
        if err.validator == "additionalProperties":
            raise ConfigError(f"unknown field in {where}: {err.message}")
        raise ConfigError(f"invalid value for {where}: {err.message}")


def resolve(command: str, config: dict, seed: int | None) -> dict:
    """Validate and fill defaults; the result fully determines the outputs."""
    cfg = copy.deepcopy(config)
    if seed is not None:
        cfg["seed"] = seed
    validate(command, cfg)
    if command == "simulate":
        milstein = cfg["scheme"] == "milstein"
        cfg.setdefault("kappa", 100.0)
        cfg.setdefault("gamma", 0.38 if milstein else 0.55)
        cfg.setdefault("gamma_prime", 0.65 if milstein else 0.48)
        cfg.setdefault("seed", 0)
        cfg.setdefault("components", 1)
        cfg.setdefault("oversample", 1)
        cfg.setdefault("initial_condition", list(DEFAULT_PSI))
        cfg["nonlinearity"] = _nonlinearity_defaults(cfg.get("nonlinearity"))
        out = cfg.setdefault("output", {})
        out.setdefault("view", "spectral")
        out.setdefault("stride", 1)
        out.setdefault("probes", [0.5])
        if milstein and cfg["time_mesh"] > 24:
            raise ConfigError("time_mesh is the dyadic exponent for milstein; keep it <= 24")
        try:
            _scheme_config(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif command == "converge":
        defaults = StudyPlan()
        cfg.setdefault("kappa", 100.0)
        cfg["nonlinearity"] = _nonlinearity_defaults(cfg.get("nonlinearity"))
        cfg.setdefault("seed", 0)
        cfg.setdefault("compare_with", None)
        if cfg["scheme"] == "milstein":
            cfg.setdefault("mesh_ladder", [4, 5, 6, 7, 8, 9])
            cfg.setdefault("ref_mesh", 12)
        for name in ("mesh_ladder", "mode_ladder", "ref_mesh", "ref_modes", "replications",
                     "components", "oversample", "shared_grid", "drop_finest", "tolerance",
                     "beta", "lam", "time_ladder_modes", "space_ladder_mesh"):
            value = getattr(defaults, name)
            cfg.setdefault(name, list(value) if isinstance(value, tuple) else value)
        try:
            plan = build_plan(cfg)
            if cfg["compare_with"]:
                plan.check_comparison(cfg["compare_with"])
        except (PlanError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    else:
        cfg.setdefault("fine_mesh", 4096)
        cfg.setdefault("meshes", [16, 32, 64, 128, 256, 512, 1024])
        cfg.setdefault("seeds", 50)
        cfg.setdefault("seed", 0)
        cfg.setdefault("components", 1)
        for m in cfg["meshes"]:
            if cfg["fine_mesh"] % m:
                raise ConfigError(f"mesh {m} does not divide fine_mesh {cfg['fine_mesh']}")
        if cfg["fine_mesh"] > 4096:
            raise ConfigError("fine_mesh above 4096 makes the O(M^2) Hölder scans impractical")
    return cfg


NONLINEARITY_PARAM = {"rational": "k", "rational-centered": "k", "constant": "c", "linear": "a", "sine": "a"}


def _nonlinearity_defaults(spec):
    spec = dict(spec or {})
    spec.setdefault("name", "rational")
    param = NONLINEARITY_PARAM[spec["name"]]
    extra = sorted(set(spec) - {"name", param})
    if extra:
        raise ConfigError(f"nonlinearity {spec['name']!r} takes only {param!r}, got {extra}")
    spec.setdefault(param, 1.0)
    return spec


def _make_nonlinearity(spec, components):
    return make_nonlinearity(spec["name"], components, **{k: v for k, v in spec.items() if k != "name"})


def build_plan(cfg: dict) -> StudyPlan:
    nl = cfg["nonlinearity"]
    return StudyPlan(
        scheme=cfg["scheme"],
        hurst=cfg["hurst"],
        gamma=cfg["gamma"],
        gamma_prime=cfg["gamma_prime"],
        beta=cfg["beta"],
        lam=cfg["lam"],
        mesh_ladder=tuple(cfg["mesh_ladder"]),
        mode_ladder=tuple(cfg["mode_ladder"]),
        ref_mesh=cfg["ref_mesh"],
        ref_modes=cfg["ref_modes"],
        replications=cfg["replications"],
        base_seed=cfg["seed"],
        kappa=cfg["kappa"],
        nonlinearity=nl["name"],
        nonlinearity_params={k: v for k, v in nl.items() if k != "name"},
        components=cfg["components"],
        oversample=cfg["oversample"],
        shared_grid=cfg["shared_grid"],
        time_ladder_modes=cfg["time_ladder_modes"],
        space_ladder_mesh=cfg["space_ladder_mesh"],
        drop_finest=cfg["drop_finest"],
        tolerance=cfg["tolerance"],
    )


def config_digest(command: str, cfg: dict) -> str:
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# --- commands -------------------------------------------------------------------


def _scheme_config(cfg: dict) -> SchemeConfig:
    nl = _make_nonlinearity(cfg["nonlinearity"], cfg["components"])
    return SchemeConfig(
        scheme=cfg["scheme"],
        time_mesh=cfg["time_mesh"],
        modes=cfg["modes"],
        hurst=cfg["hurst"],
        gamma=cfg["gamma"],
        gamma_prime=cfg["gamma_prime"],
        kappa=cfg["kappa"],
        nonlinearity=nl,
        initial_condition=sine_series_state(cfg["initial_condition"], cfg["modes"]),
        seed=cfg["seed"],
        oversample=cfg["oversample"],
        grid_size=cfg.get("grid_size"),
    )


def cmd_simulate(cfg: dict, threads: int):
    config = _scheme_config(cfg)
    driver = sample_fbm(cfg["hurst"], config.steps, cfg["components"], cfg["seed"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RegularityWarning)
        traj = run(config, driver)
    for w in caught:
        log.warning("%s", w.message)

    out = cfg["output"]
    rows = slice(None, None, out["stride"])
    times = traj.times[rows]
    if out["view"] == "grid":
        ng = out.get("grid_size", config.collocation_size)
        body = traj.on_grid(ng)[rows]
        header = ["t"] + [f"xi={x:.17g}" for x in grid_points(ng)]
    else:
        body = traj.states[rows]
        header = ["t"] + [f"y{l}" for l in range(1, config.modes + 1)]
    probes = out["probes"]
    trace = traj.probe(probes)
    inc_std = [float(np.std(np.diff(trace[:, j]), ddof=1)) if len(trace) > 2 else 0.0
               for j in range(len(probes))]
    files = {
        "trajectory": io.table_csv_text(header, np.column_stack([times, body])),
        "probe": io.table_csv_text(["t"] + [f"Y(xi={p:.17g})" for p in probes],
                                   np.column_stack([traj.times, trace])),
    }
    summary = {
        "steps": config.steps,
        "scheme_digest": config.digest(),
        "driver_digest": traj.driver_digest,
        "probe_increment_std": dict(zip([f"{p:.17g}" for p in probes], inc_std)),
        "final_max_abs_coeff": float(np.max(np.abs(traj.states[-1]))),
    }
    return files, summary


def cmd_converge(cfg: dict, threads: int):
    plan = build_plan(cfg)
    report = run_study(plan, threads=threads, compare_with=cfg["compare_with"])
    all_rows = report.rows + (report.comparison or [])
    ok = [r for r in report.rows if r["error"] is not None]
    if not ok:
        raise StudyFailed("every cell of the study blew up; nothing to report")
    header, *rows = report.csv_rows()
    data = report.to_dict()
    if report.comparison:
        data["comparison_medians"] = {
            axis: median_table(report.comparison, axis) for axis in ("time", "space")
        }
    files = {"report": io.json_text(data), "errors": io.csv_text(header, rows)}
    summary = {
        "plan_digest": plan.digest(),
        "failed_cells": sum(r["error"] is None for r in all_rows),
        "verdicts": {axis: fit["verdict"] for axis, fit in report.fits.items()},
        "monotone": {axis: fit["monotone"] for axis, fit in report.fits.items()},
    }
    return files, summary, report


def cmd_driver_stats(cfg: dict, threads: int):
    meshes = list(cfg["meshes"])
    seeds = [cfg["seed"] + i for i in range(cfg["seeds"])]

    def work(seed):
        fine = sample_fbm(cfg["hurst"], cfg["fine_mesh"], cfg["components"], seed)
        return approximation_study(fine, meshes, cfg["gamma"])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, seeds))
    else:
        results = [work(s) for s in seeds]

    rows = []
    for seed, reps in zip(seeds, results):
        for rep in reps:
            rows.append([seed, rep.coarse_mesh, rep.u_M, rep.v_M, rep.holder_norm])
    u = np.array([[r.u_M for r in reps] for reps in results])
    v = np.array([[r.v_M for r in reps] for reps in results])
    med_u, med_v = np.median(u, axis=0), np.median(v, axis=0)
    summary = {
        "hurst": cfg["hurst"],
        "gamma": cfg["gamma"],
        "target_slope": cfg["gamma"] - cfg["hurst"],
        "meshes": meshes,
        "median_u": med_u,
        "median_v": med_v,
        "u_slope": _slope(meshes, med_u),
        "v_slope": _slope(meshes, med_v),
        "u_monotone": strictly_decreasing(list(med_u)),
        "v_monotone": strictly_decreasing(list(med_v)),
        "v_monotone_all_seeds": bool(all(strictly_decreasing(list(row)) for row in v)),
    }
    files = {
        "table": io.csv_text(["seed", "M", "u_M", "v_M", "holder_norm"], rows),
        "summary": io.json_text(summary),
    }
    return files, summary


def _slope(meshes, med):
    med = np.asarray(med, dtype=float)
    keep = med > 0
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(np.asarray(meshes, dtype=float)[keep]), np.log(med[keep]), 1)[0])


FILE_NAMES = {
    "simulate": {"trajectory": "trajectory-{d}.csv", "probe": "probe-{d}.csv"},
    "converge": {"report": "report-{d}.json", "errors": "errors-{d}.csv"},
    "driver-stats": {"table": "driver-stats-{d}.csv", "summary": "driver-stats-{d}.json"},
}


def execute(command: str, cfg: dict, out_dir: Path, threads: int, overrides, config_path, quiet):
    digest = config_digest(command, cfg)
    report = None
    if command == "simulate":
        files, summary = cmd_simulate(cfg, threads)
    elif command == "converge":
        files, summary, report = cmd_converge(cfg, threads)
    else:
        files, summary = cmd_driver_stats(cfg, threads)

    names = {key: FILE_NAMES[command][key].format(d=digest) for key in files}
    manifest = {
        "command": command,
        "version": __version__,
        "config_path": str(config_path) if config_path else None,
        "overrides": list(overrides),
        "config": cfg,
        "config_digest": digest,
        "files": {names[k]: io.sha256_text(text) for k, text in files.items()},
        "summary": summary,
    }
    for key, text in files.items():
        io.atomic_write(out_dir / names[key], text)
    manifest_name = f"manifest-{command}-{digest}.json"
    io.atomic_write(out_dir / manifest_name, io.json_text(manifest))
    if not quiet:
        _print_summary(command, summary, report, out_dir, [*names.values(), manifest_name])
    return manifest


def _print_summary(command, summary, report, out_dir, names):
    if command == "converge":
        print(f"{'axis':<6} {'slope':>9} {'target':>8} {'monotone':>9}  verdict")
        for axis, fit in report.fits.items():
            slope = f"{fit['slope']:.4f}" if "slope" in fit else "-"
            print(f"{axis:<6} {slope:>9} {-fit['target']['rate']:>8.4f} {str(fit['monotone']):>9}  "
                  f"{fit['verdict']}" + ("" if fit.get("resolvable", True) else " (unresolvable)"))
    elif command == "driver-stats":
        print(f"u_M slope {summary['u_slope']:.4f} (target {summary['target_slope']:.4f}), "
              f"v_M monotone: {summary['v_monotone']}")
    else:
        for xi, s in summary["probe_increment_std"].items():
            print(f"probe xi={xi}: increment std {s:.6g}")
    for name in names:
        print(out_dir / name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughheat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run one scheme and write the trajectory and probe traces",
        "converge": "run a convergence study against a fine nested reference",
        "driver-stats": "driver approximation errors u_M and v_M over seeds",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="YAML config file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (dotted keys for sections); repeatable")
        p.add_argument("--seed", type=int, help="seed (base seed for studies)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def _fail(template: str, *args):
    print("roughheat: error: " + template % args, file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="roughheat: %(levelname)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        raw = apply_overrides(load_config(args.config), args.overrides)
        cfg = resolve(args.command, raw, args.seed)
    except ConfigError as exc:
        _fail("config error: %s", exc)
        return EXIT_CONFIG
    try:
        out_dir = io.ensure_writable(args.out)
    except OSError as exc:
        _fail("cannot write to %s: %s", args.out, exc)
        return EXIT_IO
    try:
        execute(args.command, cfg, out_dir, args.threads, args.overrides, args.config, args.quiet)
    except ConfigError as exc:
        _fail("config error: %s", exc)
        return EXIT_CONFIG
    except (NonFiniteError, StudyFailed) as exc:
        _fail("numerical blow-up: %s", exc)
        return EXIT_BLOWUP
    except OSError as exc:
        _fail("I/O failure: %s", exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
