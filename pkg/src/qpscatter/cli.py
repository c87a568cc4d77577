"""Command-line front end: ``qpscatter <task> --config run.json [--out dir]``.

Tasks
-----
solve   one or more incident angles, summary with flux errors
sweep   many angles with Bloch-phase sharing (timing per phase)
bragg   like ``sweep`` and additionally writes reflection/transmission CSV
field   field values on a rectangular grid for one angle
update  applies a sequence of geometry / wave-number updates, solving after each

The configuration is JSON; every key may be overridden with
``--set dotted.key=value`` where ``value`` is parsed as JSON when possible.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

TASKS = ("solve", "sweep", "field", "bragg", "update")
BUILTIN_PREFIX = "builtin:"

log = logging.getLogger("qpscatter")

DEFAULT_CONFIG = {
    "stack": "builtin:three_layer",
    "panels": 80,
    "unit": {},
    "compression": {},
    "solver": {},
    "theta": -0.7853981633974483,
    "angles": None,
    "field": {"x": [-0.5, 0.5, 21], "y": [-1.5, 0.5, 41], "total": False},
    "updates": [],
}


class ConfigError(ValueError):
    """Invalid run configuration."""


# ---------------------------------------------------------------------------
# configuration handling
# ---------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    """Apply one ``dotted.key=value`` override in place."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, value = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {item!r} has an empty key")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(value)


def load_config(path: str | None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    base = Path.cwd()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg.update(user)
        base = Path(path).resolve().parent
    for item in overrides:
        apply_override(cfg, item)
    cfg["_base"] = str(base)
    return cfg


def _builtin_path(name: str) -> Path:
    p = Path(__file__).with_name("data") / f"{name}.json"
    if not p.exists():
        raise ConfigError(f"unknown builtin stack {name!r}")
    return p


def stack_dict(spec, base: str) -> dict:
    """Resolve the ``stack`` entry (path, ``builtin:<name>`` or inline object)."""
    if isinstance(spec, dict):
        return spec
    if not isinstance(spec, str):
        raise ConfigError("stack must be a file path, 'builtin:<name>' or an object")
    if spec.startswith(BUILTIN_PREFIX):
        path = _builtin_path(spec[len(BUILTIN_PREFIX):])
    else:
        path = Path(spec)
        if not path.is_absolute():
            path = Path(base) / path
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read stack {spec}: {exc}") from exc


def validate_stack(obj: dict) -> None:
    import jsonschema

    from .geometry import schema_path

    with open(schema_path()) as fh:
        schema = json.load(fh)
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid stack at {where}: {exc.message}") from exc
    if len(obj["wavenumbers"]) != len(obj["interfaces"]) + 1:
        raise ConfigError("a stack with I interfaces needs I + 1 wave numbers")


def angles_from(cfg: dict) -> list:
    spec = cfg.get("angles")
    if spec is None:
        th = cfg.get("theta")
        spec = th if isinstance(th, list) else [th]
    if isinstance(spec, dict):
        import numpy as np

        try:
            return [float(t) for t in np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))]
        except KeyError as exc:
            raise ConfigError(f"angle range lacks {exc}") from exc
    try:
        out = [float(t) for t in spec]
    except (TypeError, ValueError) as exc:
        raise ConfigError("angles must be numbers") from exc
    if not out:
        raise ConfigError("no incident angles given")
    return out


def solver_params(cfg: dict):
    from .geometry import UnitCellParams
    from .lowrank import CompressionParams
    from .solver import SolverParams

    try:
        unit = UnitCellParams(**cfg.get("unit", {}))
        comp = CompressionParams(**cfg.get("compression", {}))
        panels = cfg.get("panels", 80)
        panels = tuple(int(p) for p in panels) if isinstance(panels, list) else int(panels)
        return SolverParams(panels=panels, unit=unit, compression=comp, **cfg.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver parameters: {exc}") from exc


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not serializable: {type(obj)}")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def geometry_record(stack) -> dict:
    d = stack.to_dict()
    blob = json.dumps(d, sort_keys=True, default=_json_default).encode()
    return {"hash": hashlib.sha256(blob).hexdigest(),
            "interface_digests": [g.digest() for g in stack.interfaces],
            "stack": d}


class PhaseError(RuntimeError):
    """A solver failure annotated with the phase in which it happened."""


def _phase(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        if isinstance(exc, (ConfigError, PhaseError)):
            raise
        raise PhaseError(f"{name} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def _apply_update(solver, upd: dict):
    from .geometry import interface_from_dict

    if "interface" in upd:
        geom = interface_from_dict(upd["geometry"], solver.stack.period)
        return solver.update_interface(int(upd["interface"]), geom, upd.get("panels"))
    if "layer" in upd:
        return solver.update_wavenumber(int(upd["layer"]), float(upd["omega"]))
    raise ConfigError(f"update entry needs 'interface' or 'layer': {upd}")


def _summaries(results) -> list:
    return [r.to_dict() for r in results]


def run(cfg: dict, task: str, out: Path) -> dict:
    """Execute one task and write its artifacts into ``out``.  Returns the summary."""
    import numpy as np

    from .geometry import stack_from_dict
    from .postproc import (RayleighBlochCoefficients, bragg_efficiencies, evaluate_field,
                           write_bragg_csv)
    from .solver import QPSolver

    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    sdict = stack_dict(cfg.get("stack"), cfg.get("_base", "."))
    validate_stack(sdict)
    try:
        stack = stack_from_dict(sdict)
    except ValueError as exc:
        raise ConfigError(f"invalid geometry: {exc}") from exc
    params = solver_params(cfg)
    angles = angles_from(cfg)
    out.mkdir(parents=True, exist_ok=True)

    solver = QPSolver(stack, params)
    geometries = [geometry_record(stack)]
    t0 = time.perf_counter()
    _phase("precomputation", solver.precompute)
    log.info("precomputation: %.2f s (I) + %.2f s (II)", solver.pI.time_s, solver.pII.time_s)

    summary: dict = {"task": task}
    timing: dict = {}
    if task == "update":
        steps = []
        results, rep = _phase("solve", solver.sweep, angles)
        steps.append({"update": None, "results": _summaries(results), "timing": rep})
        for upd in cfg.get("updates", []):
            info = _phase("update", _apply_update, solver, upd)
            geometries.append(geometry_record(solver.stack))
            results, rep = _phase("solve", solver.sweep, angles)
            steps.append({"update": upd, "refresh": info, "results": _summaries(results), "timing": rep})
            log.info("update %s: %d kernel evaluations, %.2f s", upd, info["kernel_evals"], info["time_s"])
        summary["steps"] = [{k: v for k, v in s.items() if k != "timing"} for s in steps]
        summary["flux_error"] = max(r["flux_error"] for s in steps for r in s["results"])
        timing = {"steps": [s["timing"] for s in steps]}
    else:
        results, timing = _phase("solve", solver.sweep, angles)
        summary["results"] = _summaries(results)
        summary["flux_error"] = max(r.flux_error for r in results)
        if task == "bragg":
            tables = [bragg_efficiencies(RayleighBlochCoefficients.from_result(r, stack), r.theta,
                                         stack.wavenumbers[0]) for r in results]
            write_bragg_csv(tables, out / "bragg.csv")
            summary["energy_totals"] = [t.total for t in tables]
        if task == "field":
            fc = cfg.get("field", {})
            try:
                xs = np.linspace(*[float(v) for v in fc["x"][:2]], int(fc["x"][2]))
                ys = np.linspace(*[float(v) for v in fc["y"][:2]], int(fc["y"][2]))
            except (KeyError, IndexError, TypeError) as exc:
                raise ConfigError("field needs x and y as [min, max, n]") from exc
            X, Y = np.meshgrid(xs, ys)
            pts = np.column_stack([X.ravel(), Y.ravel()])
            grid = _phase("field evaluation", evaluate_field, results[0], solver, pts,
                          bool(fc.get("total", False)))
            grid.to_csv(out / "field.csv")
            grid.to_json(out / "field.json")
            summary["field_points"] = int(len(pts))
            summary["field_nan"] = int(np.isnan(grid.values).sum())
    timing["wall_s"] = time.perf_counter() - t0

    manifest = {
        "task": task,
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "params": asdict(params),
        "geometries": geometries,
        "angles": angles,
        "versions": {"numpy": np.__version__},
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "timing.json", timing)
    _write_json(out / "manifest.json", manifest)
    return summary


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qpscatter",
                                description="Quasi-periodic multilayer scattering solver.")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", default="qpscatter_out", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration entry (dotted key, JSON value)")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads")
    p.add_argument("--verbose", "-v", action="count", default=0)
    return p


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads <= 0:
            print("error: --threads must be positive", file=sys.stderr)
            return 2
        _set_threads(args.threads)
    try:
        cfg = load_config(args.config, args.overrides)
        summary = run(cfg, args.task, Path(args.out))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PhaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.task}: max flux error {summary['flux_error']:.3e}; outputs in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
