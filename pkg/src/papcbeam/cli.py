"""Command-line front end: ``papcbeam run <experiment>`` and ``papcbeam replay``.

Configuration files are TOML with three tables, ``[scenario]``,
``[propagation]`` and ``[experiment]``; any key not listed in ``DEFAULTS`` is
rejected. Precedence, lowest first: built-in defaults, the experiment preset,
the file, command-line flags. dB and dBm values are converted to linear units
here and nowhere else.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError
from .model import ScenarioConfig
from .simkit import ALGORITHMS, ERROR_MODELS, ExperimentSpec, PropagationModel, SweepRow, run_sweep, write_csv

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("papcbeam")

EXIT_CONFIG = 2
EXIT_IO = 3

PAPC_MODES = ("papc_only", "generalized", "total_only")
POWER_UNITS = {"W": 1e-3, "mW": 1.0}  # multiply a value in mW by this

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "scenario": {
        "n_antennas": 4,
        "n_users": 3,
        "total_power": 40.0,
        "power_unit": "W",
        "sinr_target_db": 3.0,
        "noise_dbm": -90.0,
        "error_variance": 0.04,
        "papc_mode": "papc_only",
        "generalized_papc_factor": 1.2,
        "tolerance_fraction": 0.1,
        "max_outer_iterations": 200,
        "fixed_point_tolerance": 1e-8,
    },
    "propagation": {
        "cell_radius": 3200.0,
        "pathloss_exponent": 3.52,
        "shadow_std_db": 8.0,
        "reference_distance": 1.0,
        "min_distance": 35.0,
        "error_model": "relative",
    },
    "experiment": {
        "sweep_variable": "total_power",
        "sweep_values": [40.0],
        "algorithms": ["alg2"],
        "n_realizations": 2000,
        "error_draws_per_realization": 1,
        "seed": 0,
    },
}

PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "fig1": {
        "scenario": {"n_antennas": 4, "n_users": 3},
        "experiment": {
            "sweep_variable": "total_power",
            "sweep_values": [10.0, 20.0, 30.0, 40.0, 50.0],
            "algorithms": ["nominal_r0", "alg1", "alg1_accel", "alg2", "alg2_accel", "alg3", "tp_robust_offset"],
        },
    },
    "fig3": {
        "scenario": {"n_users": 3, "total_power": 2.0},
        "experiment": {
            "sweep_variable": "n_antennas",
            "sweep_values": [4, 6, 8],
            "algorithms": ["alg4", "alg5", "zf_uniform_t", "zf_uniform_t_unnorm", "tp_robust_zf"],
        },
    },
    "fig5": {
        "scenario": {"n_users": 8, "total_power": 1.0},
        "experiment": {
            "sweep_variable": "n_antennas",
            "sweep_values": [16, 32, 64],
            "algorithms": ["alg6", "alg7", "alg8", "alg9", "tp_robust_mrt"],
        },
    },
    "custom": {},
}


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    propagation: PropagationModel
    experiment: ExperimentSpec
    resolved: Dict[str, Dict[str, Any]]


# ---------------------------------------------------------------- config


def _check_type(key: str, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, (list, tuple)) and all(
            isinstance(v, (int, float, str)) and not isinstance(v, bool) for v in value
        )
        value = list(value) if ok else value
    else:  # pragma: no cover
        ok = True
    if not ok:
        raise ConfigError(f"expected {type(default).__name__}, got {type(value).__name__}", key)
    return value


def _merge(base: Dict[str, Dict[str, Any]], layer: Dict[str, Any], origin: str):
    for section, values in layer.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section in {origin}", section)
        if not isinstance(values, dict):
            raise ConfigError(f"must be a table in {origin}", section)
        for key, value in values.items():
            path = f"{section}.{key}"
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key in {origin}", path)
            base[section][key] = _check_type(path, DEFAULTS[section][key], value)


def load_config_file(path: str) -> Dict[str, Any]:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc


def resolve(experiment: str = "custom", file_values: Optional[Dict[str, Any]] = None,
            overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Dict[str, Any]]:
    if experiment not in PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {sorted(PRESETS)}")
    merged = copy.deepcopy(DEFAULTS)
    _merge(merged, PRESETS[experiment], "preset")
    _merge(merged, file_values or {}, "config file")
    _merge(merged, overrides or {}, "command line")
    return merged


def noise_power(resolved: Dict[str, Dict[str, Any]]) -> float:
    """Receiver noise in the run's linear power unit."""
    sc = resolved["scenario"]
    return 10.0 ** (sc["noise_dbm"] / 10.0) * POWER_UNITS[sc["power_unit"]]


def build(resolved: Dict[str, Dict[str, Any]]) -> RunConfig:
    sc, pr, ex = resolved["scenario"], resolved["propagation"], resolved["experiment"]
    if sc["power_unit"] not in POWER_UNITS:
        raise ConfigError(f"must be one of {sorted(POWER_UNITS)}", "scenario.power_unit")
    if sc["papc_mode"] not in PAPC_MODES:
        raise ConfigError(f"must be one of {PAPC_MODES}", "scenario.papc_mode")
    if not 0 < sc["tolerance_fraction"]:
        raise ConfigError("must be positive", "scenario.tolerance_fraction")
    if not sc["generalized_papc_factor"] > 0:
        raise ConfigError("must be positive", "scenario.generalized_papc_factor")
    factor = sc["generalized_papc_factor"] if sc["papc_mode"] == "generalized" else 1.0
    try:
        scenario = ScenarioConfig.uniform(
            sc["n_antennas"],
            sc["n_users"],
            sc["total_power"],
            papc_factor=factor,
            sinr_target=10.0 ** (sc["sinr_target_db"] / 10.0),
            noise_power=1.0,
            error_variance=sc["error_variance"],
            tolerance_fraction=sc["tolerance_fraction"],
            max_outer_iterations=sc["max_outer_iterations"],
            fixed_point_tolerance=sc["fixed_point_tolerance"],
        )
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], f"scenario.{exc.key}") from exc
    if sc["papc_mode"] == "total_only":
        scenario = scenario.with_papc(np.full(scenario.n_antennas, np.inf))
    if pr["error_model"] not in ERROR_MODELS:
        raise ConfigError(f"must be one of {ERROR_MODELS}", "propagation.error_model")
    try:
        prop = PropagationModel(noise_power=noise_power(resolved), **pr)
    except ValueError as exc:
        raise ConfigError(str(exc), "propagation") from exc
    values = ex["sweep_values"]
    if ex["sweep_variable"] == "n_antennas":
        if any(not float(v).is_integer() or v < 1 for v in values):
            raise ConfigError("antenna counts must be positive integers", "experiment.sweep_values")
        values = [int(v) for v in values]
    elif any(not (isinstance(v, (int, float)) and v >= 0) for v in values):
        raise ConfigError("total powers must be non-negative numbers", "experiment.sweep_values")
    try:
        spec = ExperimentSpec(
            sweep_variable=ex["sweep_variable"],
            sweep_values=tuple(values),
            algorithms=tuple(ex["algorithms"]),
            n_realizations=ex["n_realizations"],
            error_draws_per_realization=ex["error_draws_per_realization"],
            rng_seed=ex["seed"],
            tolerance_fraction=sc["tolerance_fraction"],
            generalized_papc_factor=sc["generalized_papc_factor"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "experiment") from exc
    return RunConfig(scenario, prop, spec, resolved)


def parse_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 experiment: str = "custom") -> RunConfig:
    """Resolve defaults, preset, file and flag overrides into validated objects."""
    file_values = load_config_file(path) if path else None
    return build(resolve(experiment, file_values, overrides))


def _number_list(text: str, kind=float) -> List:
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}") from exc


def flag_overrides(args, experiment: str, file_values: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Turn command-line flags into a config layer."""
    out: Dict[str, Dict[str, Any]] = {"scenario": {}, "experiment": {}}
    base = resolve(experiment, file_values)
    sweep = base["experiment"]["sweep_variable"]
    if args.realizations is not None:
        out["experiment"]["n_realizations"] = args.realizations
    if args.seed is not None:
        out["experiment"]["seed"] = args.seed
    if args.users is not None:
        out["scenario"]["n_users"] = args.users
    if args.power_list is not None:
        powers = _number_list(args.power_list)
        if sweep == "total_power":
            out["experiment"]["sweep_values"] = powers
        elif len(powers) == 1:
            out["scenario"]["total_power"] = powers[0]
        else:
            raise ConfigError("a single value is expected when sweeping antennas", "--power-list")
    if args.antennas is not None:
        antennas = _number_list(args.antennas, int)
        if sweep == "n_antennas":
            out["experiment"]["sweep_values"] = antennas
        elif len(antennas) == 1:
            out["scenario"]["n_antennas"] = antennas[0]
        else:
            raise ConfigError("a single value is expected when sweeping total power", "--antennas")
    if args.algorithms is not None:
        out["experiment"]["algorithms"] = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    return {k: v for k, v in out.items() if v}


# ---------------------------------------------------------------- outputs


def rows_document(name: str, run: RunConfig, rows: Sequence[SweepRow], timing: bool) -> dict:
    out_rows = []
    for row in rows:
        d = row.to_dict()
        if timing:
            d["mean_ms"] = row.mean_ms
        out_rows.append(d)
    return {
        "experiment": name,
        "version": __version__,
        "config": run.resolved,
        "noise_power_linear": noise_power(run.resolved),
        "rows": out_rows,
        "nonconverged_total": int(sum(r.n_nonconverged for r in rows)),
        "failed_total": int(sum(r.n_failed for r in rows)),
    }


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _clean(obj):
    # NaN is not valid JSON; write null instead
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def emit_convergence_trace(rows: Sequence[SweepRow], path, algorithm: Optional[str] = None) -> Optional[str]:
    """Per-iteration fraction of realisations with a violated PAPC.

    One line per (sweep value, algorithm, iteration). Rows without a captured
    trace are skipped; nothing is written if no row has one.
    """
    selected = [r for r in rows if r.violation_fraction is not None and (algorithm is None or r.algorithm == algorithm)]
    if not selected:
        return None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep_value", "algorithm", "iteration", "violation_fraction"])
        for r in selected:
            for i, v in enumerate(r.violation_fraction):
                w.writerow([repr(float(r.sweep_value)), r.algorithm, i, repr(round(float(v), 12))])
    return str(path)


def execute(name: str, run: RunConfig, out_dir: str, workers: int = 1, trace: bool = False,
            timing: bool = False, cli_options: Optional[dict] = None) -> dict:
    """Run the sweep and write CSV, JSON, optional trace and the manifest; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    rows = run_sweep(run.experiment, run.scenario, run.propagation, workers=workers, trace=trace, timing=timing)
    paths = {
        "csv": os.path.join(out_dir, f"{name}.csv"),
        "json": os.path.join(out_dir, f"{name}.json"),
        "manifest": os.path.join(out_dir, f"{name}_manifest.json"),
    }
    write_csv(rows, paths["csv"], timing)
    write_json(rows_document(name, run, rows, timing), paths["json"])
    if trace:
        written = emit_convergence_trace(rows, os.path.join(out_dir, f"{name}_trace.csv"))
        if written:
            paths["trace"] = written
    manifest = {
        "experiment": name,
        "version": __version__,
        "seed": run.experiment.rng_seed,
        "config": run.resolved,
        "options": {"workers": workers, "trace": trace, "timing": timing, **(cli_options or {})},
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": paths,
    }
    write_json(manifest, paths["manifest"])
    for row in rows:
        log.info(
            "%s %s: mean outage %.4f, max-user %.4f, %d realisations, %d not converged",
            row.sweep_value, row.algorithm, row.stats.mean_outage, row.stats.max_outage,
            row.stats.realizations_used, row.n_nonconverged,
        )
    return manifest


# ---------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="papcbeam", description="Robust beamforming with per-antenna power constraints.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log one summary line per row")
    # accept -v after the subcommand as well
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment", parents=[common])
    run.add_argument("experiment", choices=sorted(PRESETS))
    run.add_argument("--realizations", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default="results")
    run.add_argument("--config")
    run.add_argument("--trace", action="store_true", help="write per-iteration violation fractions")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--power-list", help="comma-separated total powers")
    run.add_argument("--antennas", help="comma-separated antenna counts")
    run.add_argument("--users", type=int)
    run.add_argument("--algorithms", help="comma-separated algorithm names")
    run.add_argument("--timing", action="store_true", help="fill the mean_ms column (not reproducible)")

    rep = sub.add_parser("replay", help="re-run from a manifest", parents=[common])
    rep.add_argument("manifest")
    rep.add_argument("--out", help="output directory (default: the manifest's)")
    rep.add_argument("--workers", type=int)

    sub.add_parser("algorithms", help="list registered algorithms")
    return p


def _run(args) -> int:
    file_values = load_config_file(args.config) if args.config else None
    overrides = flag_overrides(args, args.experiment, file_values)
    run = build(resolve(args.experiment, file_values, overrides))
    if args.workers < 1:
        raise ConfigError("must be at least 1", "--workers")
    execute(args.experiment, run, args.out, args.workers, args.trace, args.timing)
    return 0


def _replay(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    try:
        name, resolved, opts = manifest["experiment"], manifest["config"], manifest["options"]
    except KeyError as exc:
        raise ConfigError(f"manifest lacks {exc}") from exc
    run = build(resolve(name, resolved))
    out = args.out or os.path.dirname(manifest["outputs"]["csv"]) or "."
    workers = args.workers or opts.get("workers", 1)
    execute(name, run, out, workers, opts.get("trace", False), opts.get("timing", False))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "algorithms":
            for alg in ALGORITHMS.values():
                print(f"{alg.name:22s} {alg.papc_mode:12s} {alg.description}")
            return 0
        if args.command == "run":
            return _run(args)
        return _replay(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
