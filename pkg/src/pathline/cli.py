"""Command-line front end.

Subcommands: ``scenes``, ``validate``, ``trace``, ``surface``, ``flow``,
``verify``.  Scenes are referenced either as ``builtin:<name>`` or as a
path to a scene file (searched in ``PATHLINE_SCENE_PATH`` directories).

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 runtime
error (the error name and context are printed to stderr).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import PathlineError
from .extend import BallQuadrature, ExtensionConfig, VelocityExtension
from .fields import validate_scene
from .integrate import (
    IntegratorConfig,
    flow_map,
    integrate_surface,
    trace,
    trajectory_to_csv,
    trajectory_to_json,
)
from .scenelang import compile_scene_text
from .scenes import builtin_names, builtin_scene, scene_description
from .verify import twin_experiment

__all__ = ["main", "run"]


def _resolve_scene_path(name: str):
    if os.path.exists(name):
        return name
    for d in os.environ.get("PATHLINE_SCENE_PATH", "").split(os.pathsep):
        if not d:
            continue
        cand = os.path.join(d, name)
        if os.path.exists(cand):
            return cand
    return None


def load_scene(spec: str, validate: bool = True):
    if spec.startswith("builtin:"):
        return builtin_scene(spec[len("builtin:"):])
    path = _resolve_scene_path(spec)
    if path is None:
        raise FileNotFoundError(
            f"scene file {spec!r} not found (searched PATHLINE_SCENE_PATH)")
    with open(path, "r", encoding="utf-8") as fh:
        return compile_scene_text(fh.read(), validate=validate)


def _parse_x0(values, dim: int):
    points = []
    for s in values:
        parts = [p for p in s.split(",") if p.strip()]
        if len(parts) != dim:
            raise ValueError(f"--x0 {s!r} has {len(parts)} components, "
                             f"scene dimension is {dim}")
        points.append(np.array([float(p) for p in parts]))
    return points


def _config_from(args) -> IntegratorConfig:
    return IntegratorConfig(
        h=args.h,
        scheme=args.scheme,
        tol_event=args.tol_event,
        tol_grazing=args.tol_grazing,
    )


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _add_common(p, trace_like=True):
    p.add_argument("--scene", required=True,
                   help="builtin:<name> or path to a scene file")
    p.add_argument("--no-validate", action="store_true",
                   help="skip scene validation before running")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for sampled verifiers")
    if trace_like:
        p.add_argument("--x0", action="append", default=[],
                       help="comma-separated start point; repeatable")
        p.add_argument("--t0", type=float, default=0.0)
        p.add_argument("--t-end", dest="t_end", type=float, required=True)
        p.add_argument("--h", type=float, default=1e-3)
        p.add_argument("--scheme", choices=("rk4", "rk45"), default="rk4")
        p.add_argument("--tol-event", dest="tol_event", type=float, default=1e-10)
        p.add_argument("--tol-grazing", dest="tol_grazing", type=float,
                       default=1e-10)


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="pathline",
        description="Trace pathlines of two-phase velocity fields and run "
                    "wellposedness diagnostics.")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("scenes", help="list built-in scenes")

    pv = sub.add_parser("validate", help="check interface conditions")
    pv.add_argument("--scene", required=True)
    pv.add_argument("--grid", type=int, default=50,
                    help="time and surface sample counts")
    pv.add_argument("--out", default=None)
    pv.add_argument("--quiet", action="store_true")

    pt = sub.add_parser("trace", help="integrate pathlines")
    _add_common(pt)

    ps = sub.add_parser("surface", help="integrate the intrinsic interface velocity")
    _add_common(ps)

    pf = sub.add_parser("flow", help="flow map of the extended interface velocity")
    _add_common(pf)
    pf.add_argument("--quad", default="32,64",
                    help="radial,angular quadrature resolution")

    pw = sub.add_parser("verify", help="twin experiments and uniqueness monitors")
    _add_common(pw)
    pw.add_argument("--delta", default="1e-3,1e-4,1e-5",
                    help="comma-separated perturbation sizes")
    pw.add_argument("--phi-csv", dest="phi_csv", default=None,
                    help="write phi/psi time series for the first delta")

    return ap


def _cmd_scenes(args) -> int:
    for name in builtin_names():
        print(f"{name:<18s} {scene_description(name)}")
    return 0


def _cmd_validate(args) -> int:
    scene = load_scene(args.scene, validate=False)
    report = validate_scene(scene, n_times=args.grid, n_points=args.grid)
    if not args.quiet:
        print(report)
    if args.out:
        _emit(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
              args.out)
    return 0 if report.passed else 1


def _require_x0(args, scene):
    if not args.x0:
        raise ValueError("at least one --x0 is required")
    return _parse_x0(args.x0, scene.dim)


def _cmd_trace(args) -> int:
    scene = load_scene(args.scene, validate=False)
    if not args.no_validate:
        report = validate_scene(scene, n_times=10, n_points=10)
        if not report.passed:
            if not args.quiet:
                print(report, file=sys.stderr)
            return 1
    points = _require_x0(args, scene)
    config = _config_from(args)
    trajectories = [trace(scene, config, args.t0, x0, args.t_end)
                    for x0 in points]
    if args.format == "csv":
        text = "".join(trajectory_to_csv(tr) for tr in trajectories)
    else:
        doc = {
            "scene": scene.name,
            "t0": args.t0,
            "t_end": args.t_end,
            "trajectories": [trajectory_to_json(tr) for tr in trajectories],
        }
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    if not args.quiet and args.out:
        for tr in trajectories:
            print(f"x0 -> x({tr.t_final:g}) = {tr.x_final}, "
                  f"{len(tr.events)} event(s)")
    return 0


def _cmd_surface(args) -> int:
    scene = load_scene(args.scene, validate=False)
    points = _require_x0(args, scene)
    config = _config_from(args)
    trajectories = [integrate_surface(scene, config, args.t0, x0, args.t_end)
                    for x0 in points]
    if args.format == "csv":
        text = "".join(trajectory_to_csv(tr) for tr in trajectories)
    else:
        doc = {"scene": scene.name,
               "trajectories": [trajectory_to_json(tr) for tr in trajectories]}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    return 0


def _cmd_flow(args) -> int:
    scene = load_scene(args.scene, validate=False)
    points = _require_x0(args, scene)
    radial, angular = (int(v) for v in args.quad.split(","))
    ext = VelocityExtension(scene, ExtensionConfig(
        quad=BallQuadrature(scene.dim, radial, angular)))
    config = _config_from(args)
    starts = np.array([scene.chart.project(args.t0, p)[1] for p in points])
    ends = flow_map(ext, config, args.t0, starts, args.t_end)
    dists = [abs(scene.chart.project(args.t_end, e)[0]) for e in ends]
    n = scene.dim
    header = ("seed,"
              + ",".join(f"x{k+1}_start" for k in range(n)) + ","
              + ",".join(f"x{k+1}_end" for k in range(n)) + ",d_abs")
    lines = [header]
    for i, (s, e, d) in enumerate(zip(starts, ends, dists)):
        lines.append(
            f"{i}," + ",".join(f"{v:.17g}" for v in s) + ","
            + ",".join(f"{v:.17g}" for v in e) + f",{d:.17g}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_verify(args) -> int:
    scene = load_scene(args.scene, validate=False)
    report = validate_scene(scene, n_times=10, n_points=10)
    points = _require_x0(args, scene)
    config = _config_from(args)
    deltas = [float(v) for v in args.delta.split(",") if v.strip()]
    twin = twin_experiment(scene, config, args.t0, points[0], deltas,
                           args.t_end, seed=args.seed)
    doc = {
        "validation": report.to_dict(),
        "twin_experiment": twin.to_dict(),
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    if args.phi_csv and scene.metadata.get("flat"):
        from .verify import UniquenessMonitor
        base = trace(scene, config, args.t0, points[0], args.t_end,
                     diagnostics=False)
        twin_traj = trace(scene, config, args.t0,
                          points[0] + deltas[0] * np.eye(scene.dim)[-1],
                          args.t_end, diagnostics=False)
        mon = UniquenessMonitor(scene, base, twin_traj)
        times = np.linspace(args.t0, args.t_end, 201)
        rows = ["t,phi,psi"]
        for t in times:
            rows.append(f"{t:.17g},{mon.phi(t):.17g},{mon.psi(t):.17g}")
        with open(args.phi_csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(rows) + "\n")
    if not args.quiet and not args.out:
        pass  # JSON already on stdout
    return 0


_COMMANDS = {
    "scenes": _cmd_scenes,
    "validate": _cmd_validate,
    "trace": _cmd_trace,
    "surface": _cmd_surface,
    "flow": _cmd_flow,
    "verify": _cmd_verify,
}


def run(argv=None) -> int:
    """Parse arguments and dispatch; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except PathlineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())
