"""``ermtree`` command line: fit | gen | sweep | enumerate.

Exit codes: 0 success, 1 result outside scientific tolerance, 2 configuration
or input error, 3 guard-rail / resource error.  Outputs are written only
after every result is computed, each through a temporary file and an
atomic rename.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import jsonschema

from . import ratelab
from .core import LossKind, dataset_to_csv, empirical_risk, read_csv
from .errors import ConfigError, GuardRailError
from .solver import FitConfig, Penalty, enumerate_valid_partitions, fit_constrained, fit_penalized_detail
from .synth import (BoxMarginal, HypercubeSpec, LinearRamp, NoiseModel, PshabSpec, make_hypercube, make_pshab,
                    sample_hypercube, sample_regression, spec_from_dict)

EXIT_OK, EXIT_TOLERANCE, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3

# ---------------------------------------------------------------------------
# configuration schema

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_RANGE = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_INT_GRID = {"type": "array", "items": _POS_INT, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


WORLD_SCHEMA = {"oneOf": [
    _obj({"kind": {"const": "pshab"}, "d": _POS_INT, "B": _POS_INT, "s": _POS_INT, "alpha_range": _RANGE,
          "lambda_range": _RANGE, "bumps_per_piece": {"type": "integer", "minimum": 0}, "abar": _NUM,
          "base_scale": _NUM, "seed": {"type": "integer", "minimum": 0}}, ["kind", "d"]),
    _obj({"kind": {"const": "hypercube"}, "d": _POS_INT, "B": _POS_INT, "s": _POS_INT, "rho": _NUM, "r": _POS_INT,
          "Lambda_inf": _NUM, "abar": _NUM, "C_phi": _NUM, "C1": _NUM, "m": _POS_INT, "w": _NUM,
          "seed": {"type": "integer", "minimum": 0}}, ["kind", "d"]),
    _obj({"kind": {"const": "scaled_hypercube"}, "d": _POS_INT, "s": _POS_INT, "rho": _NUM, "abar": _NUM,
          "B": _POS_INT, "r0": _NUM, "n0": _NUM, "C_phi": _NUM, "Lambda_inf": _NUM, "C1": _NUM}, ["kind"]),
    _obj({"kind": {"const": "ramp"}, "d": _POS_INT, "dim": {"type": "integer", "minimum": 0}, "slope": _NUM},
         ["kind"]),
    _obj({"kind": {"const": "file"}, "path": {"type": "string"}}, ["kind", "path"]),
]}

NOISE_SCHEMA = _obj({"kind": {"enum": ["none", "gaussian", "student_t", "orlicz"]}, "scale": _NUM, "m": _NUM,
                     "beta": _NUM}, ["kind"])

SOLVER_SCHEMA = _obj({"loss": {"enum": ["reg", "cls", "squared", "zero_one"]}, "leaves": _POS_INT,
                      "lambda": _NUM, "theta": _NUM, "sup_bound": {"type": ["number", "null"]},
                      "engine": {"enum": ["auto", "cells", "segments", "rectangles"]}})

SWEEP_SCHEMA = _obj({
    "kind": {"enum": ["rate-reg", "rate-cls", "approx", "heavy-tail", "oracle-check", "alloc-check", "enum-check"]},
    "n_grid": _INT_GRID, "L_grid": _INT_GRID, "reps": _POS_INT, "tolerance": _NUM, "target": _NUM,
    "c_grid": {"type": "array", "items": _NUM, "minItems": 1}, "u": _NUM, "validation_fraction": _NUM,
    "theta": _NUM, "max_leaves": _POS_INT, "grid_n": _POS_INT, "n_test": _POS_INT,
    "m_values": {"type": "array", "items": _NUM, "minItems": 1}, "trials": _POS_INT, "C_max": _NUM,
    "ratio_max": _NUM, "consistency_tol": _NUM, "s": _POS_INT, "abar": _NUM, "rho": _NUM,
    "ns": _INT_GRID, "ds": _INT_GRID, "Ls": _INT_GRID,
}, ["kind"])

OUTPUT_SCHEMA = _obj({"directory": {"type": "string"}})

GEN_SCHEMA = _obj({"seed": {"type": "integer", "minimum": 0}, "n": _POS_INT, "world": WORLD_SCHEMA,
                   "noise": NOISE_SCHEMA, "output": OUTPUT_SCHEMA}, ["seed", "n", "world"])

SWEEP_CONFIG_SCHEMA = _obj({"seed": {"type": "integer", "minimum": 0}, "world": WORLD_SCHEMA,
                            "noise": NOISE_SCHEMA, "solver": SOLVER_SCHEMA, "sweep": SWEEP_SCHEMA,
                            "output": OUTPUT_SCHEMA, "workers": _POS_INT}, ["seed", "sweep"])


def _validate(doc: dict, schema: dict) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def load_config(path: str, overrides=(), seed: Optional[int] = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = copy.deepcopy(doc)
    for item in overrides:
        keys, value = _parse_override(item)
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {'.'.join(keys)} crosses a non-object")
        node[keys[-1]] = value
    if seed is not None:
        doc["seed"] = seed
    return doc


# ---------------------------------------------------------------------------
# output


def _dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(directory: Path, files: dict) -> None:
    """Write ``{name: text}`` atomically, file by file, into ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        target = directory / name
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _write_single(path: Path, text: str) -> None:
    write_outputs(path.parent if str(path.parent) else Path("."), {path.name: text})


def _out_dir(cfg: dict, cli_out: Optional[str]) -> Path:
    if cli_out:
        return Path(cli_out)
    d = cfg.get("output", {}).get("directory")
    if not d:
        raise ConfigError("no output directory: pass --out or set output.directory")
    return Path(d)


# ---------------------------------------------------------------------------
# world construction


def _build_world(world: dict, seed: int):
    kind = world["kind"]
    if kind == "pshab":
        return make_pshab(world.get("seed", seed), world["d"], world.get("B", 1), world.get("s", 1),
                          tuple(world.get("alpha_range", (1.0, 1.0))), tuple(world.get("lambda_range", (1.0, 1.0))),
                          world.get("bumps_per_piece", 1), world.get("abar"), world.get("base_scale"))
    if kind == "hypercube":
        return make_hypercube(world.get("seed", seed), world["d"], world.get("B", 1), world.get("s", 1),
                              world.get("rho", 0.0), world.get("r", 2), world.get("Lambda_inf", 1.0),
                              world.get("abar", 1.0), world.get("C_phi", 1.0), world.get("C1", 1.0),
                              world.get("m"), world.get("w"))
    if kind == "scaled_hypercube":
        return ratelab.ScaledHypercubeWorld(
            d_=world.get("d", 1), s_=world.get("s", 1), rho_=world.get("rho", 0.0), abar_=world.get("abar", 1.0),
            B=world.get("B", 1), r0=world.get("r0", 4.0), n0=world.get("n0", 512.0), C_phi=world.get("C_phi", 1.0),
            Lambda_inf=world.get("Lambda_inf", 1.0), C1=world.get("C1", 1.0))
    if kind == "ramp":
        return LinearRamp(world.get("d", 1), world.get("dim", 0), world.get("slope", 1.0))
    try:
        doc = json.loads(Path(world["path"]).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read world spec {world['path']}: {exc}") from None
    return spec_from_dict(doc)


def _noise(cfg: dict) -> NoiseModel:
    return NoiseModel.from_dict(cfg["noise"]) if "noise" in cfg else NoiseModel()


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    data = read_csv(args.data)
    loss = LossKind.parse(args.loss)
    M = math.inf if args.sup_bound is None else args.sup_bound
    if (args.leaves is None) == (args.lam is None):
        raise ConfigError("pass exactly one of --leaves and --lambda")
    if args.lam is not None:
        cfg = FitConfig(loss=loss, sup_bound=M, penalty=Penalty(args.lam, args.theta), engine=args.engine)
        model = fit_penalized_detail(data, cfg).model
    else:
        if args.theta != 1.0:
            raise ConfigError("--theta applies only with --lambda")
        model = fit_constrained(data, FitConfig(max_leaves=args.leaves, loss=loss, sup_bound=M, engine=args.engine))
    risk = empirical_risk(model, data)
    _write_single(Path(args.out), model.to_json())
    print(json.dumps({"empirical_risk": risk.mean, "leaves": model.n_leaves}, sort_keys=True))
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    _validate(cfg, GEN_SCHEMA)
    seed, n = cfg["seed"], cfg["n"]
    spec = _build_world(cfg["world"], seed)
    if isinstance(spec, HypercubeSpec):
        data, _ = sample_hypercube(spec, n, seed)
    elif isinstance(spec, (PshabSpec, LinearRamp)):
        data, _ = sample_regression(spec, _noise(cfg), n, seed)
    else:
        raise ConfigError("gen supports pshab, hypercube, ramp and file worlds")
    manifest = {"spec": "spec.json", "data": "data.csv", "seed": seed, "n": n, "kind": spec.to_dict()["kind"],
                "noise": _noise(cfg).to_dict(),
                "oracle": "eta(x)" if isinstance(spec, HypercubeSpec) else "f*(x)"}
    write_outputs(_out_dir(cfg, args.out), {
        "data.csv": dataset_to_csv(data),
        "spec.json": _dump(spec.to_dict()),
        "manifest.json": _dump(manifest),
        "config.json": _dump(cfg),
    })
    return EXIT_OK


def _schedule(cfg: dict, kind: str, rho: float = 0.0) -> ratelab.Schedule:
    sw, solver = cfg["sweep"], cfg.get("solver", {})
    kw = {k: sw[k] for k in ("u", "validation_fraction", "max_leaves") if k in sw}
    if "c_grid" in sw:
        kw["c_grid"] = tuple(float(c) for c in sw["c_grid"])
    if kind == "reg":
        noise = _noise(cfg)
        M = solver.get("sup_bound", 1.0)
        return ratelab.Schedule(kind="reg", M=math.inf if M is None else M, K=math.sqrt(noise.variance), **kw)
    theta = sw.get("theta", solver.get("theta"))
    return ratelab.Schedule.for_classification(rho=rho, theta=theta, **kw)


def _sweep(cfg: dict, workers: Optional[int]) -> tuple[dict, bool]:
    sw = cfg["sweep"]
    kind = sw["kind"]
    seed = cfg["seed"]
    extra = {k: sw[k] for k in ("tolerance", "target") if k in sw}
    if "n_test" in sw:
        extra["n_test"] = sw["n_test"]
    if kind == "alloc-check":
        res = ratelab.alloc_check(sw.get("trials", 1000), seed)
        return {"summary.json": _dump(res)}, res["pass"]
    if kind == "enum-check":
        res = ratelab.enum_check(tuple(sw.get("ns", (2, 3, 4, 5))), tuple(sw.get("ds", (1, 2))),
                                 tuple(sw.get("Ls", (1, 2, 3))), seed)
        return {"summary.json": _dump(res)}, res["pass"]
    if "world" not in cfg:
        raise ConfigError(f"sweep kind {kind} needs a world section")
    world = _build_world(cfg["world"], seed)
    if kind == "approx":
        loss = LossKind.parse(cfg.get("solver", {}).get("loss", "reg"))
        d = getattr(world, "d", 1)
        rep = ratelab.run_approx_sweep(world, BoxMarginal.uniform(d), sw.get("L_grid", [4, 8, 16, 32, 64]),
                                       sw.get("grid_n", 4096), loss, sw.get("s", 1), sw.get("abar", 1.0),
                                       sw.get("rho", 0.0), sw.get("tolerance"), sw.get("target"), d=d)
        return {"report.csv": rep.to_csv(), "summary.json": rep.to_json()}, rep.within_tolerance
    if kind in ("rate-reg", "heavy-tail", "oracle-check") and not isinstance(world, (PshabSpec, LinearRamp)):
        raise ConfigError(f"sweep kind {kind} needs a regression (pshab or ramp) world")
    if kind == "rate-reg":
        rep = ratelab.run_rate_sweep(ratelab.RegressionWorld(world), _noise(cfg), sw["n_grid"], sw.get("reps", 1),
                                     _schedule(cfg, "reg"), seed, workers=workers, **extra)
        return {"report.csv": rep.to_csv(), "summary.json": rep.to_json()}, rep.within_tolerance
    if kind == "rate-cls":
        if isinstance(world, HypercubeSpec):
            world = ratelab.HypercubeWorld(world)
        if not isinstance(world, ratelab.HypercubeWorld):
            raise ConfigError("rate-cls needs a hypercube or scaled_hypercube world")
        rep = ratelab.run_rate_sweep(world, NoiseModel(), sw["n_grid"], sw.get("reps", 1),
                                     _schedule(cfg, "cls", world.rho), seed, workers=workers, **extra)
        return {"report.csv": rep.to_csv(), "summary.json": rep.to_json()}, rep.within_tolerance
    if kind == "heavy-tail":
        extra.pop("target", None)
        sched = _schedule(cfg, "reg")
        sched = dataclasses.replace(sched, K=1.0)
        hc = ratelab.heavy_tail_comparison(ratelab.RegressionWorld(world), sw["n_grid"], sw.get("reps", 1),
                                           sw.get("m_values", [3]), seed, sched, workers=workers, **extra)
        files = {f"report_{k}.csv": r.to_csv() for k, r in hc.reports.items()}
        summary = hc.summary()
        summary["checks"] = hc.checks(sw.get("consistency_tol", 0.1))
        files["summary.json"] = _dump(summary)
        return files, summary["checks"]["pass"]
    # oracle-check
    tab = ratelab.oracle_inequality_check(ratelab.RegressionWorld(world), _noise(cfg), sw["n_grid"],
                                          sw.get("L_grid", [2, 4, 8, 16]), sw.get("u", 1.0), sw.get("reps", 1), seed,
                                          cfg.get("solver", {}).get("sup_bound", 1.0) or 1.0,
                                          sw.get("grid_n", 4096), sw.get("n_test", 200_000), workers)
    summary = tab.summary()
    ok = tab.max_C <= sw.get("C_max", 50.0) and bool(max(tab.n_ratio()) <= sw.get("ratio_max", 5.0))
    summary["pass"] = ok
    return {"report.csv": tab.to_csv(), "summary.json": _dump(summary)}, ok


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    if args.workers is not None:
        cfg["workers"] = args.workers
    _validate(cfg, SWEEP_CONFIG_SCHEMA)
    workers = cfg.get("workers")
    files, ok = _sweep(cfg, workers)
    files["config.json"] = _dump(cfg)
    write_outputs(_out_dir(cfg, args.out), files)
    print(files["summary.json"], end="")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_enumerate(args) -> int:
    data = read_csv(args.data)
    res = enumerate_valid_partitions(data, args.leaves)
    doc = {"count": res.count, "bound": res.bound, "within_bound": res.within_bound,
           "partitions": [list(map(list, p)) for p in res.partitions]}
    if args.out:
        _write_single(Path(args.out), _dump(doc))
    print(json.dumps({"count": res.count, "bound": res.bound, "within_bound": res.within_bound}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ermtree", description="Exact ERM decision trees and rate experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit an exact ERM tree to a CSV dataset")
    f.add_argument("data")
    f.add_argument("--loss", choices=["reg", "cls"], default="reg")
    f.add_argument("--leaves", type=int)
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--theta", type=float, default=1.0)
    f.add_argument("--sup-bound", type=float, default=None, help="M; omitted means no clipping")
    f.add_argument("--engine", choices=["auto", "cells", "segments", "rectangles"], default="auto")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gen", help="generate a dataset and its spec from a config")
    g.add_argument("config")
    g.add_argument("--out")
    g.add_argument("--seed", type=int)
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sweep", help="run an experiment sweep from a config")
    s.add_argument("config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("enumerate", help="count split trees with at most L leaves")
    e.add_argument("data")
    e.add_argument("--leaves", type=int, required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_enumerate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GuardRailError as exc:
        print(f"ermtree: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ConfigError, OSError) as exc:
        print(f"ermtree: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
