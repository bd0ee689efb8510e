"""Command-line entry point: run missions, summarize bundles, lint scenarios."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

PLANNER_CHOICES = ("swap", "explore-only", "surface-gain")
_THREAD_VARS = ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _set_threads(n: int | None) -> None:
    # must happen before numpy/numba are imported
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _resolve_scenario(arg: str):
    from .scenario import bundled_scenario, load_scenario

    p = Path(arg)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return load_scenario(p)
    return load_scenario(bundled_scenario(arg))


def cmd_run(args) -> int:
    from .mission import run_mission

    sc = _resolve_scenario(args.scenario)
    seed = sc.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else Path("runs") / f"{sc.name}-{args.mode}-{seed}"
    state = run_mission(sc, out, args.mode, seed, args.budget)
    final = state.metrics[-1].cumulative if state.metrics else 0.0
    print(f"{sc.name} {args.mode} seed={seed}: {final:.1f}% inspected in {state.clock:.1f} s -> {out}")
    return 0


def _last_row(path: Path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows[-1] if rows else {}


def cmd_metrics(args) -> int:
    import math

    import numpy as np

    from .mesh import read_ply
    from .metrics import SurfaceLedger, residual_accounting, triangle_normals
    from .scenario import Scenario
    from .semantic import max_view_distance, resolution_at
    from .voxels import OccupancyGrid

    bundle = Path(args.bundle)
    manifest = json.loads((bundle / "manifest.json").read_text())
    sc = Scenario.model_validate(manifest["parameters"])
    world = sc.build_world()
    camera = sc.sensors.camera.model()
    ledger = SurfaceLedger(world)
    resolution = {}
    for j in ledger.ids:
        ply = bundle / f"semantic_{j}.ply"
        if not ply.exists():
            resolution[j] = 0.0
            continue
        mesh, props = read_ply(ply)
        insp = props["inspected"]
        if mesh.n_faces and insp.any():
            tris = mesh.vertices[mesh.faces[insp]]
            ledger.mark_near(j, tris.mean(axis=1), triangle_normals(tris))
            d = props["best_distance"][insp]
            d = d[d > 0]
            resolution[j] = float(np.mean(resolution_at(d, camera))) if len(d) else 0.0
        else:
            resolution[j] = 0.0
    logged = _last_row(bundle / "metrics.csv") if (bundle / "metrics.csv").exists() else {}
    summary = {
        "logged_cumulative_pct": float(logged.get("cumulative_inspected_pct", 0.0)),
        "mesh_cumulative_pct": ledger.percent(),
        "mesh_per_semantic_pct": {str(j): ledger.percent(j) for j in ledger.ids},
        "mesh_avg_resolution_px_cm2": {str(j): v for j, v in resolution.items()},
    }
    if args.residuals:
        grid = OccupancyGrid.load(bundle / "grid.bin")
        l_max = max_view_distance(sc.inspection.r_min, camera)
        rep = residual_accounting(world, grid, sc.start[:3], sc.body(), sc.sensors.depth.model(), l_max,
                                  math.radians(sc.inspection.theta_max_deg), SurfaceLedger(world), camera,
                                  spacing=args.audit_spacing)
        summary["residual_volume_m3"] = rep.volume
        summary["residual_surface_m2"] = rep.surface
        summary["residual_surface_per_semantic_m2"] = {str(j): v for j, v in rep.per_semantic_surface.items()}
        summary["audit_configurations"] = rep.n_audit
    (bundle / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"cumulative inspected: logged {summary['logged_cumulative_pct']:.2f}%, "
          f"from meshes {summary['mesh_cumulative_pct']:.2f}%")
    for j in ledger.ids:
        print(f"  semantic {j}: {ledger.percent(j):6.2f}%  avg resolution {resolution[j]:.2f} px/cm^2")
    if args.residuals:
        print(f"residual volume {summary['residual_volume_m3']:.3f} m^3, "
              f"residual surface {summary['residual_surface_m2']:.3f} m^2 "
              f"({summary['audit_configurations']} audit configurations)")
    return 0


def cmd_validate(args) -> int:
    from .scenario import ScenarioError

    status = 0
    for path in args.scenarios:
        try:
            sc = _resolve_scenario(path)
        except ScenarioError as exc:
            print(exc, file=sys.stderr)
            status = 1
            continue
        labels = sorted({b.label for b in sc.world.boxes if b.label > 0})
        print(f"{path}: ok ({sc.name}, {len(sc.world.boxes)} boxes, semantics {labels})")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semexplore", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a mission and write its artifact bundle")
    r.add_argument("scenario", help="scenario YAML path or bundled scenario name")
    r.add_argument("--mode", choices=PLANNER_CHOICES, default="swap")
    r.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    r.add_argument("--budget", type=float, default=None, help="mission time budget in seconds")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--threads", type=int, default=None, help="thread count for numeric libraries")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("metrics", help="recompute coverage from a run bundle")
    m.add_argument("bundle", help="directory written by 'run'")
    m.add_argument("--residuals", action="store_true", help="also audit residual volume and surface")
    m.add_argument("--audit-spacing", type=float, default=1.0, help="audit lattice spacing in meters")
    m.add_argument("--threads", type=int, default=None)
    m.set_defaults(func=cmd_metrics)

    v = sub.add_parser("validate", help="lint scenario files")
    v.add_argument("scenarios", nargs="+")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(getattr(args, "threads", None))
    from .scenario import ScenarioError

    try:
        return args.func(args)
    except ScenarioError as exc:
        print(exc, file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
