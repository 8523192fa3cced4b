"""Command-line experiment runner.

Every subcommand reads a JSON experiment config (``--config``), applies flag
overrides, writes its artifacts to ``--out`` and records a ``manifest.json``.
The manifest hash covers the subcommand, the effective config, the seed and
library versions; every artifact carries it. Wall-clock time appears only in
the manifest, so reruns produce byte-identical artifacts.

Exit codes: 0 success, 2 config error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
import time
import traceback
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional

import numba
import numpy as np
import scipy

from . import __version__
from .evaluation import (compare_pipelines, ecdf, feasibility_report, load_catalog,
                         write_comparison_csv, write_ecdf_csv)
from .forest import ForestParams, ModelFormatError, forest_to_dict
from .ingest import (BundleFormatError, ColumnMapping, IngestError, Scenario, load_bundle,
                     parse_trace, scenario_to_dict, split_scenarios, write_trace)
from .irem import IremConfig, load_plan, optimize
from .pipelines import (CvConfig, Dataset, HoldoutConfig, PipelineMode, load_cv_report,
                        run_cv, train_pipeline)
from .rem import RemError, rem_to_dict
from .synthetic import SynthConfig, generate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
SUBCOMMANDS = ("ingest", "build-rem", "train", "eval", "optimize-irem", "ecdf",
               "feasibility", "synth", "compare")
# keys that change where or how fast a run happens, never what it computes
_UNHASHED = ("output_dir", "threads")


class ConfigError(Exception):
    def __init__(self, problems: List[Dict[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p['field']}: {p['message']}" for p in problems))


class DataError(Exception):
    pass


def _versions() -> Dict[str, str]:
    return {"remrate": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Run:
    """Output directory, manifest bookkeeping and artifact writers for one invocation."""

    def __init__(self, subcommand: str, config: dict, base_dir: Path):
        self.subcommand = subcommand
        self.config = config
        self.base_dir = base_dir
        self.out = Path(config["output_dir"])
        hashed = {k: v for k, v in config.items() if k not in _UNHASHED}
        self.manifest_hash = hashlib.sha256(_canonical(
            {"subcommand": subcommand, "config": hashed, "versions": _versions()}
        ).encode()).hexdigest()
        self.artifacts: List[str] = []

    def path(self, key: str) -> Path:
        """Config path ``key`` resolved against the config file's directory."""
        p = Path(self.config[key])
        return p if p.is_absolute() else self.base_dir / p

    def write_json(self, name: str, doc: dict) -> Path:
        doc = dict(doc)
        doc["manifest_hash"] = self.manifest_hash
        p = self.out / name
        with open(p, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.artifacts.append(name)
        return p

    def write_csv(self, name: str, writer) -> Path:
        """Let ``writer(path)`` produce a CSV, then prepend a manifest comment."""
        p = self.out / name
        writer(p)
        body = p.read_text()
        p.write_text(f"# manifest_hash={self.manifest_hash}\n{body}")
        self.artifacts.append(name)
        return p

    def register(self, name: str) -> None:
        self.artifacts.append(name)

    def finish(self) -> None:
        manifest = {"manifest_hash": self.manifest_hash, "subcommand": self.subcommand,
                    "seed": self.config["seed"],
                    "config": {k: v for k, v in self.config.items() if k not in _UNHASHED},
                    "threads": self.config.get("threads"),
                    "versions": _versions(), "artifacts": sorted(self.artifacts),
                    "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


# --- config handling -------------------------------------------------------

def load_config(args) -> tuple:
    config: dict = {}
    base_dir = Path.cwd()
    if args.config:
        cpath = Path(args.config)
        if not cpath.is_file():
            raise ConfigError([{"field": "--config", "message": f"file not found: {cpath}"}])
        try:
            config = json.loads(cpath.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([{"field": "--config", "message": f"invalid JSON: {exc}"}])
        if not isinstance(config, dict):
            raise ConfigError([{"field": "--config", "message": "top level must be an object"}])
        base_dir = cpath.parent
    config = copy.deepcopy(config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["output_dir"] = str(Path(args.out).resolve())
    elif "output_dir" in config:
        p = Path(config["output_dir"])
        config["output_dir"] = str(p if p.is_absolute() else (base_dir / p).resolve())
    if args.threads is not None:
        config["threads"] = args.threads
    for flag, key in (("bundle", "bundle"), ("trace", "trace"), ("mapping", "mapping")):
        val = getattr(args, flag, None)
        if val is not None:
            config[key] = str(Path(val).resolve())
    if getattr(args, "mode", None):
        config["modes"] = [m.strip() for m in args.mode.split(",")]
    if getattr(args, "cell_width", None) is not None:
        config["cell_width"] = args.cell_width
    if getattr(args, "iterations", None) is not None:
        config.setdefault("irem", {})["iterations"] = args.iterations
    if getattr(args, "widths", None):
        try:
            widths = [float(w) for w in args.widths.split(",")]
        except ValueError:
            raise ConfigError([{"field": "--widths", "message": "expected comma-separated numbers"}])
        config.setdefault("irem", {})["candidate_widths"] = widths
    return config, base_dir


_NEEDS = {
    "ingest": ["trace", "mapping"],
    "build-rem": ["bundle"],
    "train": ["bundle"],
    "eval": ["bundle"],
    "optimize-irem": ["bundle"],
    "ecdf": ["bundle"],
    "feasibility": ["bundle"],
    "synth": ["synth"],
    "compare": ["reports"],
}


def validate_config(sub: str, config: dict, base_dir: Path) -> None:
    problems = []

    def bad(field, message):
        problems.append({"field": field, "message": message})

    seed = config.get("seed")
    if seed is None:
        bad("seed", "a seed is mandatory (config or --seed)")
    elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        bad("seed", "must be an unsigned 64-bit integer")
    if "output_dir" not in config:
        bad("output_dir", "no output directory (config or --out)")
    threads = config.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        bad("threads", "must be a positive integer")
    for key in _NEEDS[sub]:
        if key not in config:
            bad(key, f"required by '{sub}'")
    for key in ("trace", "mapping", "bundle", "requirements", "layer_plan_path"):
        if key in config:
            p = Path(config[key])
            p = p if p.is_absolute() else base_dir / p
            if not p.is_file():
                bad(key, f"file not found: {p}")
    if sub == "compare" and isinstance(config.get("reports"), dict):
        for mode, rp in config["reports"].items():
            p = Path(rp)
            p = p if p.is_absolute() else base_dir / p
            if not p.is_file():
                bad(f"reports.{mode}", f"file not found: {p}")
    modes = config.get("modes", ["instantaneous"])
    if not isinstance(modes, list) or not modes:
        bad("modes", "must be a nonempty list")
        modes = []
    for k, m in enumerate(modes):
        try:
            PipelineMode(m)
        except ValueError:
            bad(f"modes[{k}]", f"unknown mode {m!r}")
    needs_plan = sub == "build-rem" or (
        sub in ("eval", "train") and any(m in ("rem", "combined") for m in modes))
    if needs_plan and not any(k in config for k in ("layer_plan", "layer_plan_path", "cell_width")):
        bad("layer_plan", "REM-based runs need layer_plan, layer_plan_path or cell_width")
    if "cell_width" in config:
        cw = config["cell_width"]
        if not isinstance(cw, (int, float)) or cw <= 0:
            bad("cell_width", "must be a positive number")
    for section, cls in (("forest", ForestParams), ("cv", None), ("irem", None)):
        if section in config and not isinstance(config[section], dict):
            bad(section, "must be an object")
    if isinstance(config.get("forest"), dict):
        try:
            ForestParams(**{**config["forest"], "seed": 0})
        except (TypeError, ValueError) as exc:
            bad("forest", str(exc))
    if isinstance(config.get("cv"), dict):
        try:
            CvConfig(**{**config["cv"], "seed": 0})
        except (TypeError, ValueError) as exc:
            bad("cv", str(exc))
    if sub == "optimize-irem" and isinstance(config.get("irem", {}), dict):
        irem = {k: v for k, v in config.get("irem", {}).items() if k not in ("validation", "features", "final_cv")}
        try:
            IremConfig(**{**irem, "seed": 0})
        except (TypeError, ValueError) as exc:
            bad("irem", str(exc))
    if sub == "synth" and isinstance(config.get("synth"), dict):
        try:
            SynthConfig.from_dict({**config["synth"], "seed": 0})
        except (TypeError, ValueError) as exc:
            bad("synth", str(exc))
    if problems:
        raise ConfigError(problems)


def _forest_params(config: dict) -> ForestParams:
    return ForestParams(**{**config.get("forest", {}), "seed": config["seed"]})


def _cv(config: dict) -> CvConfig:
    return CvConfig(**{**config.get("cv", {}), "seed": config["seed"]})


def _scenario(run: Run) -> Scenario:
    return load_bundle(run.path("bundle"))


def _layer_plan(run: Run, features: List[str]) -> Optional[Dict[str, float]]:
    c = run.config
    if "layer_plan" in c:
        return {str(k): float(v) for k, v in c["layer_plan"].items()}
    if "layer_plan_path" in c:
        return load_plan(run.path("layer_plan_path"))
    if "cell_width" in c:
        return {f: float(c["cell_width"]) for f in features}
    return None


def _dataset(run: Run, scen: Scenario) -> Dataset:
    return Dataset(scen.records, run.config.get("features"), scen.origin, scen.scenario_id)


# --- subcommands -----------------------------------------------------------

def cmd_synth(run: Run) -> None:
    cfg = SynthConfig.from_dict({**run.config["synth"], "seed": run.config["seed"]})
    tr = generate(cfg)
    holder = {}
    run.write_csv("trace.csv", lambda p: holder.setdefault("mapping", write_trace(tr.records, p)))
    m = holder["mapping"]
    run.write_json("mapping.json", {"fields": m.fields, "features": m.features, "units": {
        "timestamp": "s", "latitude": "deg", "longitude": "deg", "target_rate": "Mbit/s",
        "rsrp": "dBm", "rsrq": "dB", "sinr": "dB"}})
    run.write_json("truth.json", tr.sidecar())
    scen = split_scenarios(tr.records)[cfg.scenario_id]
    scen.metadata = {"source": "synthetic"}
    run.write_json("bundle.json", scenario_to_dict(scen))


def cmd_ingest(run: Run) -> None:
    mapping = ColumnMapping.from_json(run.path("mapping"))
    parsed = parse_trace(run.path("trace"), mapping)
    groups = split_scenarios(parsed.records)
    wanted = run.config.get("scenario")
    if wanted is not None:
        if wanted not in groups:
            raise DataError(f"scenario {wanted!r} not in trace (have {sorted(groups)})")
        groups = {wanted: groups[wanted]}
    files = {}
    for k, (sid, scen) in enumerate(sorted(groups.items())):
        name = f"bundle_{k:03d}.json"
        scen.metadata = {"source": Path(run.config["trace"]).name}
        run.write_json(name, scenario_to_dict(scen))
        files[sid] = name
    run.write_json("ingest_report.json", {
        "n_records": len(parsed.records), "rejected": parsed.rejected,
        "scenarios": {sid: {"bundle": files[sid], "n_records": len(groups[sid].records),
                            "origin": asdict(groups[sid].origin)} for sid in files}})


def cmd_build_rem(run: Run) -> None:
    scen = _scenario(run)
    data = _dataset(run, scen)
    plan = _layer_plan(run, data.features)
    rem = data.build_rem(np.arange(len(data)), plan)
    run.write_json("rem.json", rem_to_dict(rem))


def cmd_train(run: Run) -> None:
    scen = _scenario(run)
    data = _dataset(run, scen)
    modes = run.config.get("modes", ["instantaneous"])
    if len(modes) != 1:
        raise ConfigError([{"field": "modes", "message": "train takes exactly one mode"}])
    mode = PipelineMode(modes[0])
    plan = _layer_plan(run, data.features) if mode.uses_rem else None
    forest, rem, means = train_pipeline(data, mode, plan, _forest_params(run.config),
                                        threads=run.config.get("threads", 1))
    run.write_json("model.json", forest_to_dict(forest))
    doc = {"mode": mode.value, "features": data.features, "impute_means": means,
           "model": "model.json", "rem": None}
    if rem is not None:
        run.write_json("rem.json", rem_to_dict(rem))
        doc["rem"] = "rem.json"
    run.write_json("pipeline.json", doc)


def cmd_eval(run: Run) -> None:
    scen = _scenario(run)
    data = _dataset(run, scen)
    cv = _cv(run.config)
    params = _forest_params(run.config)
    for m in run.config.get("modes", ["instantaneous"]):
        mode = PipelineMode(m)
        plan = _layer_plan(run, data.features) if mode.uses_rem else None
        rep = run_cv(data, mode, plan, params, cv, rem_scope=run.config.get("rem_scope", "fold"),
                     threads=run.config.get("threads", 1))
        run.write_json(f"cv_{mode.value}.json", rep.to_dict())
        run.write_csv(f"cv_{mode.value}.csv", rep.write_csv)


def cmd_optimize_irem(run: Run) -> None:
    scen = _scenario(run)
    data = _dataset(run, scen)
    ic = dict(run.config.get("irem", {}))
    validation = ic.pop("validation", {"kind": "holdout", "fraction": 0.2})
    features = ic.pop("features", None) or data.features
    final_cv = ic.pop("final_cv", False)
    seed = run.config["seed"]
    config = IremConfig(**{**ic, "seed": seed})
    if validation.get("kind", "holdout") == "cv":
        protocol = CvConfig(k=validation.get("k", 2), repetitions=validation.get("repetitions", 1),
                            seed=seed)
    else:
        protocol = HoldoutConfig(validation.get("fraction", 0.2), seed)
    params = _forest_params(run.config)
    res = optimize(data, protocol, features, params, config, threads=run.config.get("threads", 1))
    run.write_json("irem_result.json", res.to_dict())
    run.write_json("best_plan.json", {"format_version": 1, "layer_plan": res.best_plan})
    if final_cv:
        rep = run_cv(data, config.objective_mode, res.best_plan, params, _cv(run.config),
                     threads=run.config.get("threads", 1))
        doc = rep.to_dict()
        doc["mode"] = "irem"
        run.write_json("cv_irem.json", doc)
        run.write_csv("cv_irem.csv", rep.write_csv)


def _rates(run: Run) -> np.ndarray:
    return np.array([r.target_rate for r in _scenario(run).records])


def cmd_ecdf(run: Run) -> None:
    curve = ecdf(_rates(run))
    run.write_csv("ecdf.csv", lambda p: write_ecdf_csv(curve, p))
    run.write_json("ecdf.json", {"x": curve.values.tolist(), "fraction": curve.fractions.tolist()})


def cmd_feasibility(run: Run) -> None:
    catalog = load_catalog(run.path("requirements") if "requirements" in run.config else None)
    rep = feasibility_report(_rates(run), catalog, strict=run.config.get("strict", True))
    run.write_json("feasibility.json", rep.to_dict())


def cmd_compare(run: Run) -> None:
    reports = {}
    for mode, rp in run.config["reports"].items():
        p = Path(rp)
        reports[mode] = load_cv_report(p if p.is_absolute() else run.base_dir / p)
    protocols = {(r.k, r.repetitions, r.seed) for r in reports.values()}
    if len(protocols) > 1:
        raise DataError(f"reports use different CV protocols: {sorted(protocols)}")
    rows = compare_pipelines(reports, baseline=run.config.get("baseline", "instantaneous"))
    run.write_json("comparison.json", {"rows": [asdict(r) for r in rows]})
    run.write_csv("comparison.csv", lambda p: write_comparison_csv(rows, p))


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "build-rem": cmd_build_rem,
            "train": cmd_train, "eval": cmd_eval, "optimize-irem": cmd_optimize_irem,
            "ecdf": cmd_ecdf, "feasibility": cmd_feasibility, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remrate", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="global seed (u64)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: available CPUs)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--bundle", help="scenario bundle JSON")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "ingest":
            p.add_argument("--trace")
            p.add_argument("--mapping")
        if name in ("eval", "train"):
            p.add_argument("--mode", help="instantaneous, rem or combined (comma list for eval)")
        if name in ("eval", "train", "build-rem"):
            p.add_argument("--cell-width", type=float, dest="cell_width",
                           help="uniform cell width for every layer")
        if name == "optimize-irem":
            p.add_argument("--iterations", type=int)
            p.add_argument("--widths", help="comma-separated candidate widths in m")
    return parser


def _emit_error(code: int, kind: str, message: str, out: Optional[str],
                problems: Optional[list] = None) -> int:
    record = {"error": kind, "exit_code": code, "message": message}
    if problems:
        record["problems"] = problems
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out and Path(out).is_dir():
        (Path(out) / "error.json").write_text(text + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config: dict = {}
    try:
        config, base_dir = load_config(args)
        config.setdefault("threads", os.cpu_count() or 1)
        validate_config(args.command, config, base_dir)
        run = Run(args.command, config, base_dir)
        run.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](run)
        run.finish()
        return EXIT_OK
    except ConfigError as exc:
        return _emit_error(EXIT_CONFIG, "config", str(exc), config.get("output_dir"), exc.problems)
    except (DataError, IngestError, RemError, ModelFormatError, BundleFormatError,
            FileNotFoundError, ValueError, KeyError) as exc:
        return _emit_error(EXIT_DATA, "data", f"{type(exc).__name__}: {exc}",
                           config.get("output_dir"))
    except Exception as exc:  # noqa: BLE001
        return _emit_error(EXIT_INTERNAL, "internal",
                           f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}",
                           config.get("output_dir"))


if __name__ == "__main__":
    sys.exit(main())
