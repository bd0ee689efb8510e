"""Behavior state machine sequencing exploration, hole coverage and inspection."""
from __future__ import annotations

import csv
import json
import math
import platform
import time as _time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numba
import numpy as np
import pydantic
import scipy

from . import __version__
from .executor import Execution, SensorEvent, SensorRig, execute_path
from .explore import SURFACE, VOLUMETRIC, GainModel, ZeroGainError, plan_exploration_step, relocate_to_frontier, \
    update_global_graph, attach_pose
from .geometry import Configuration, FrustumModel
from .graph import GraphIsolationError, PlanGraph, build_local_graph
from .holes import HoleParams, HoleTraceRow, calculate_viewpoints, closest_viewpoint, covers, extend_around, \
    open_edges, reduce_viewpoints, select_closest_semantic, tangent_vector, write_hole_trace
from .inspection import InspectionParams, NoCoverableFacesError, build_inspection_graph, plan_inspection, \
    write_candidates
from .mesh import write_ply
from .metrics import MetricsSample, SurfaceLedger, compute_metrics
from .scenario import Scenario
from .semantic import MeshingParams, SemanticRecord, accumulate_points, max_view_distance, mark_inspected, \
    rebuild_mesh


class Mode(str, Enum):
    EXPLORATION = "exploration"
    HOLE_COVERAGE = "hole_coverage"
    INSPECTION = "inspection"
    DONE = "done"


PLANNERS = ("swap", "explore-only", "surface-gain")

# Allowed mode switches; Done is reachable from everywhere once the budget runs out.
TRANSITIONS = {
    Mode.EXPLORATION: {Mode.HOLE_COVERAGE, Mode.INSPECTION, Mode.DONE},
    Mode.HOLE_COVERAGE: {Mode.INSPECTION, Mode.EXPLORATION, Mode.DONE},
    Mode.INSPECTION: {Mode.HOLE_COVERAGE, Mode.EXPLORATION, Mode.DONE},
    Mode.DONE: set(),
}

_RNG_TAGS = {"local": 1, "holes": 2, "hole_graph": 3, "inspection": 4, "relocate": 5}


@dataclass
class Transition:
    time: float
    source: Mode
    target: Mode
    n_hole: int
    n_inspect: int


@dataclass
class SemanticProgress:
    hole_points: int = -1  # point count at the end of the last hole-coverage attempt
    inspect_points: int = -1
    hole_inadmissible: bool = False


@dataclass
class MissionState:
    mode: Mode
    clock: float
    pose: Configuration
    grid: object
    global_graph: PlanGraph
    records: dict[int, SemanticRecord] = field(default_factory=dict)
    progress: dict[int, SemanticProgress] = field(default_factory=dict)
    metrics: list[MetricsSample] = field(default_factory=list)
    trace: list[tuple[float, Configuration, Mode]] = field(default_factory=list)
    transitions: list[Transition] = field(default_factory=list)
    hole_rows: list[HoleTraceRow] = field(default_factory=list)
    inspection_plans: list = field(default_factory=list)
    exploration_exhausted: bool = False
    stint_start: float = 0.0

    @property
    def detected(self) -> set[int]:
        return set(self.records)


class Mission:
    """Owns the simulated world, the robot's map and all planner state."""

    def __init__(self, scenario: Scenario, planner: str = "swap", seed: int | None = None,
                 budget: float | None = None):
        if planner not in PLANNERS:
            raise ValueError(f"planner must be one of {PLANNERS}")
        self.sc = scenario
        self.planner = planner
        self.seed = scenario.seed if seed is None else int(seed)
        self.budget = scenario.mission.budget if budget is None else float(budget)
        self.world = scenario.build_world()
        self.kin = scenario.kinematics()
        self.body = scenario.body()
        s = scenario.sensors
        self.depth = s.depth.model()
        self.camera = s.camera.model()
        self.rig = SensorRig(self.depth, self.camera, s.depth_resolution_deg, s.camera_occlusion_tol)
        ins = scenario.inspection
        self.l_max = max_view_distance(ins.r_min, self.camera)
        self.theta_i = math.radians(ins.theta_max_deg)
        self.quality_camera = FrustumModel(self.camera.h_fov, self.camera.v_fov, min(self.l_max, self.camera.d_max))
        ex = scenario.exploration
        gain_frustum = FrustumModel(self.depth.h_fov, min(ex.gain_v_fov, self.depth.v_fov),
                                    min(ex.gain_range, self.depth.d_max))
        if planner == "surface-gain":
            self.gain_model = GainModel(SURFACE, self.camera, ex.surface_yaw_candidates)
        else:
            self.gain_model = GainModel(VOLUMETRIC, gain_frustum)
        self.meshing = MeshingParams(scenario.semantic.mesh_cell, scenario.semantic.normal_radius_cells,
                                     scenario.semantic.min_points)
        h = scenario.holes
        self.hole_params = HoleParams(h.samples_per_edge, h.d_v_max, math.radians(h.theta_v_max_deg),
                                      h.perimeter_factor * scenario.resolution, h.time_budget,
                                      h.connect_radius, h.max_neighbors, h.graph_samples,
                                      h.occlusion_tail_voxels * scenario.resolution)
        self.insp_params = InspectionParams(self.l_max, self.theta_i, ins.k, ins.eta, ins.n_samples,
                                            ins.connect_radius, ins.max_neighbors,
                                            h.occlusion_tail_voxels * scenario.resolution)
        self.ledger = SurfaceLedger(self.world)
        start = scenario.start_configuration()
        grid = self.world.empty_grid(scenario.resolution)
        self.state = MissionState(Mode.EXPLORATION, 0.0, start, grid, PlanGraph(start, self.kin))
        self.hole_graph: PlanGraph | None = None
        self._rng_calls = 0
        self._wall_start = _time.perf_counter()
        self._sensed_start = False

    # --- helpers ---------------------------------------------------------

    def rng(self, tag: str) -> np.random.Generator:
        self._rng_calls += 1
        return np.random.default_rng([self.seed, _RNG_TAGS[tag], self._rng_calls])

    def time_left(self) -> float:
        return max(0.0, self.budget - self.state.clock)

    def out_of_time(self) -> bool:
        cap = self.sc.mission.wall_clock_cap
        if cap is not None and _time.perf_counter() - self._wall_start > cap:
            return True
        return self.time_left() <= 1e-9

    def meshes(self):
        return {j: r.mesh for j, r in self.state.records.items()}

    def _on_event(self, ev: SensorEvent) -> None:
        st = self.state
        pose = ev.pose
        scan = ev.depth
        st.grid.integrate_depth_scan(pose.position, scan.points, scan.hit)
        st.grid.clear_body(pose, self.body)
        st.grid.mark_camera_rays(pose, self.camera, self.sc.sensors.camera_ray_resolution_deg)
        for j in sorted(int(v) for v in np.unique(scan.labels[scan.hit]) if v > 0):
            if j not in st.records:
                st.records[j] = SemanticRecord(j, self.meshing.cell)
                st.progress[j] = SemanticProgress()
            accumulate_points(st.records[j], scan.labelled(j), pose.position)
        cam = ev.camera
        for j, rec in st.records.items():
            f, d, a = cam.for_semantic(j)
            if len(f) and rec.mesh.n_faces:
                mark_inspected(rec, f, d, a, self.l_max, self.theta_i)
        st.trace.append((ev.time, pose, st.mode))
        st.metrics.append(compute_metrics(ev.time, st.grid, self.ledger, st.records, self.camera))

    def execute(self, path: list[Configuration], time_limit: float | None = None) -> Execution:
        """Run a path from the current pose, bounded by the remaining budget and ``time_limit``."""
        st = self.state
        limit = self.time_left() if time_limit is None else min(self.time_left(), max(0.0, time_limit))
        ex = execute_path(self.world, self.rig, path, self.kin, self.sc.sensors.period, st.clock,
                          meshes=self.meshes, on_event=self._on_event, time_limit=limit,
                          include_start=not self._sensed_start, collect=False)
        self._sensed_start = True
        st.clock += ex.elapsed
        st.pose = ex.final_pose
        if len(ex.executed) > 1:
            update_global_graph(st.global_graph, ex.executed, st.grid, self.body, self.sc.exploration.global_rho,
                                self.sc.exploration.global_connect_radius)
        self.remesh()
        return ex

    def remesh(self) -> None:
        for rec in self.state.records.values():
            rebuild_mesh(rec, self.meshing)

    def centroid(self, j: int) -> np.ndarray:
        rec = self.state.records[j]
        if rec.mesh.n_faces:
            return rec.mesh.centroid()
        return rec.points.mean(axis=0)

    # --- semantic admission ------------------------------------------------

    def holed(self) -> list[int]:
        """Semantics with open hole loops, unused hole time and new data since the last attempt."""
        if self.planner != "swap":
            return []
        out = []
        for j, rec in sorted(self.state.records.items()):
            pr = self.state.progress[j]
            if rec.hole_time_used >= self.hole_params.time_budget or len(rec.points) <= pr.hole_points:
                continue
            if rec.mesh.n_faces and open_edges(rec.mesh, self.hole_params.min_perimeter):
                out.append(j)
        return out

    def inspectable(self) -> list[int]:
        if self.planner != "swap":
            return []
        out = []
        ins = self.sc.inspection
        for j, rec in sorted(self.state.records.items()):
            pr = self.state.progress[j]
            if rec.mesh.n_faces == 0 or len(rec.points) < pr.inspect_points + max(1, ins.min_new_points):
                continue
            todo = rec.mesh.areas[~rec.inspected].sum()
            if todo > ins.min_uninspected_fraction * rec.mesh.areas.sum():
                out.append(j)
        return out

    def switch(self, target: Mode) -> None:
        st = self.state
        if target not in TRANSITIONS[st.mode]:
            raise RuntimeError(f"illegal mode switch {st.mode.value} -> {target.value}")
        st.transitions.append(Transition(st.clock, st.mode, target, len(self.holed()), len(self.inspectable())))
        st.mode = target
        if target == Mode.EXPLORATION:
            st.stint_start = st.clock

    # --- behaviors -------------------------------------------------------

    def initial_sense(self) -> None:
        if not self._sensed_start:
            self.execute([self.state.pose])

    def explore_once(self, time_limit: float | None = None) -> bool:
        """One exploration step; returns False when no informative vertex remains."""
        st = self.state
        ex = self.sc.exploration
        half = np.asarray(ex.local_half_extent)
        p = st.pose.position
        path = None
        try:
            graph = build_local_graph(st.grid, st.pose, p - half, p + half, ex.n_samples, ex.connect_radius,
                                      ex.max_neighbors, self.body, self.kin, self.rng("local"))
            path = plan_exploration_step(graph, st.grid, self.gain_model, ex.discount, ex.min_gain).path
        except (GraphIsolationError, ZeroGainError):
            path = relocate_to_frontier(st.global_graph, st.grid, self.gain_model, st.pose, self.body,
                                        ex.discount, ex.min_gain, exclude_radius=float(np.linalg.norm(half)))
        if path is None or len(path) < 2:
            return False
        self.execute(path, time_limit)
        return True

    def run_exploration(self) -> None:
        """Explore until the stint ends, then pick the next behavior."""
        st = self.state
        stint = self.sc.exploration.stint_time if self.planner == "swap" else math.inf
        while not self.out_of_time():
            left = stint - (st.clock - st.stint_start)
            if left <= 1e-9:
                break
            if not self.explore_once(left if math.isfinite(left) else None):
                st.exploration_exhausted = True
                break
            st.exploration_exhausted = False
        if self.out_of_time():
            self.switch(Mode.DONE)
        elif self.holed():
            self.switch(Mode.HOLE_COVERAGE)
        elif self.inspectable():
            self.switch(Mode.INSPECTION)
        elif st.exploration_exhausted:
            self.switch(Mode.DONE)
        else:
            st.stint_start = st.clock

    def _hole_graph(self) -> PlanGraph:
        st = self.state
        if self.hole_graph is None:
            self.hole_graph = PlanGraph(st.global_graph.vertices[st.global_graph.root], self.kin)
        self.hole_graph.merge(st.global_graph, st.grid, self.body)
        return self.hole_graph

    def cover_semantic(self, j: int) -> None:
        """Iterative hole closing for one semantic until no admissible viewpoint or time is left."""
        st = self.state
        hp = self.hole_params
        rec = st.records[j]
        gh = self._hole_graph()
        lo = rec.points.min(axis=0) - hp.d_v_max
        hi = rec.points.max(axis=0) + hp.d_v_max
        extend_around(gh, st.grid, self.body, lo, hi, st.pose.position, self.rng("hole_graph"), hp)
        tried: set[tuple[int, int, int]] = set()
        key_cell = self.meshing.cell / 2.0

        def key(e):
            return tuple(np.floor(e.midpoint / key_cell).astype(int).tolist())

        while not self.out_of_time() and rec.hole_time_used < hp.time_budget:
            all_edges = open_edges(rec.mesh, hp.min_perimeter)
            if not all_edges:
                break
            # edges already in view of an executed viewpoint are not retried
            edges = [e for e in all_edges if key(e) not in tried]
            wc = []
            if edges:
                tangents = np.array([tangent_vector(rec.mesh, e) for e in edges])
                wc = calculate_viewpoints(edges, tangents, st.grid, gh, self.body, self.depth,
                                          self.rng("holes"), hp)
            if not wc:
                st.progress[j].hole_inadmissible = True
                break
            ws = reduce_viewpoints(wc, edges, tangents, hp)
            src = attach_pose(gh, st.pose, st.grid, self.body)
            if src is None:
                break
            best = closest_viewpoint(ws, gh, src)
            if best is None:
                break
            vp, ids, _ = best
            v = gh.add_vertex(vp.conf)
            for link in vp.links:
                gh.add_edge(v, link)
            tried.update(key(e) for e, t in zip(edges, tangents) if covers(vp, e, t, hp))
            path = gh.configs(ids) + [vp.conf]
            if path[0].distance(st.pose) > 1e-9:
                path = [st.pose] + path
            ex = self.execute(path, hp.time_budget - rec.hole_time_used)
            rec.hole_time_used += ex.elapsed
            after = len(open_edges(rec.mesh, hp.min_perimeter))
            st.hole_rows.append(HoleTraceRow(len(st.hole_rows), j, vp.conf, vp.theta_v, len(all_edges), after))
            gh.merge(st.global_graph, st.grid, self.body)
        st.progress[j].hole_points = len(rec.points)

    def run_hole_coverage(self) -> None:
        st = self.state
        while not self.out_of_time():
            cand = self.holed()
            if not cand:
                break
            j = select_closest_semantic({k: self.centroid(k) for k in cand}, st.pose.position)
            self.cover_semantic(j)
        if self.out_of_time():
            self.switch(Mode.DONE)
        elif self.inspectable():
            self.switch(Mode.INSPECTION)
        else:
            self.switch(Mode.EXPLORATION)

    def inspect_semantic(self, j: int) -> None:
        st = self.state
        rec = st.records[j]
        try:
            ig = build_inspection_graph(rec.mesh, rec.inspected, st.grid, self.body, self.kin, st.pose,
                                        self.camera, self.rng("inspection"), self.insp_params, st.global_graph)
            plan = plan_inspection(ig, self.insp_params.eta, self.insp_params.k, self.rng("inspection"))
        except (GraphIsolationError, NoCoverableFacesError):
            st.progress[j].inspect_points = len(rec.points)
            return
        st.inspection_plans.append((j, plan))
        st.progress[j].inspect_points = len(rec.points)
        if len(plan.path) > 1:
            self.execute(plan.path)
        st.progress[j].inspect_points = len(rec.points)

    def run_inspection(self) -> None:
        st = self.state
        while not self.out_of_time():
            if self.holed():
                self.switch(Mode.HOLE_COVERAGE)
                return
            cand = self.inspectable()
            if not cand:
                break
            j = select_closest_semantic({k: self.centroid(k) for k in cand}, st.pose.position)
            self.inspect_semantic(j)
        if self.out_of_time():
            self.switch(Mode.DONE)
        elif self.holed():
            self.switch(Mode.HOLE_COVERAGE)
        else:
            self.switch(Mode.EXPLORATION)

    def step(self) -> Mode:
        """Run the current behavior to its next mode decision."""
        st = self.state
        if st.mode == Mode.DONE:
            return st.mode
        if not self._sensed_start:
            if self.out_of_time():
                self.switch(Mode.DONE)
                return st.mode
            self.initial_sense()
        if st.mode == Mode.EXPLORATION:
            self.run_exploration()
        elif st.mode == Mode.HOLE_COVERAGE:
            self.run_hole_coverage()
        elif st.mode == Mode.INSPECTION:
            self.run_inspection()
        return st.mode

    def run(self) -> MissionState:
        while self.state.mode != Mode.DONE:
            self.step()
        return self.state


# --- artifacts ----------------------------------------------------------------

def _f(x: float) -> str:
    return f"{x:.6f}"


def write_metrics_csv(path, samples: list[MetricsSample], ids: list[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "explored_volume_m3", "cumulative_inspected_pct"]
                   + [f"inspected_pct_{j}" for j in ids] + [f"avg_resolution_px_cm2_{j}" for j in ids])
        for s in samples:
            w.writerow([_f(s.time), _f(s.explored_volume), _f(s.cumulative)]
                       + [_f(s.per_semantic.get(j, 0.0)) for j in ids]
                       + [_f(s.resolution.get(j, 0.0)) for j in ids])


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "x", "y", "z", "yaw", "mode"])
        for t, p, m in trace:
            w.writerow([_f(t), _f(p.x), _f(p.y), _f(p.z), _f(p.yaw), m.value])


def write_transitions_csv(path, transitions: list[Transition]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "from", "to", "n_hole", "n_inspect"])
        for t in transitions:
            w.writerow([_f(t.time), t.source.value, t.target.value, t.n_hole, t.n_inspect])


def validate_trace(modes: list[str], transitions: list[tuple[str, str, int, int]] | None = None) -> list[str]:
    """Problems with a recorded mode sequence; an empty list means it is valid.

    ``modes`` is the per-row mode column of a trace. ``transitions`` are
    (from, to, n_hole, n_inspect) rows with queue sizes at switch time.
    """
    problems = []
    seq = [m for k, m in enumerate(modes) if k == 0 or modes[k - 1] != m]
    if seq and seq[0] != Mode.EXPLORATION.value:
        problems.append(f"trace starts in {seq[0]}")
    for a, b in zip(seq, seq[1:]):
        if Mode(b) not in TRANSITIONS[Mode(a)]:
            problems.append(f"illegal switch {a} -> {b}")
    for src, dst, nh, ni in transitions or []:
        if Mode(dst) not in TRANSITIONS[Mode(src)]:
            problems.append(f"illegal switch {src} -> {dst}")
        if dst == Mode.HOLE_COVERAGE.value and nh == 0:
            problems.append("hole coverage entered with no holed semantic")
        if dst == Mode.INSPECTION.value and nh > 0:
            problems.append("inspection entered while holed semantics wait")
    return problems


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_mission(scenario: Scenario, out_dir, planner: str = "swap", seed: int | None = None,
                budget: float | None = None) -> MissionState:
    """Run a mission and write its artifact bundle to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wall0 = _time.perf_counter()
    mission = Mission(scenario, planner, seed, budget)
    state = mission.run()
    ids = mission.ledger.ids
    write_metrics_csv(out / "metrics.csv", state.metrics, ids)
    write_trace_csv(out / "trace.csv", state.trace)
    write_transitions_csv(out / "transitions.csv", state.transitions)
    write_hole_trace(out / "holes.csv", state.hole_rows)
    write_candidates(out / "inspection_candidates.csv", state.inspection_plans)
    state.grid.save(out / "grid.bin")
    for j, rec in sorted(state.records.items()):
        write_ply(out / f"semantic_{j}.ply", rec.mesh, rec.inspected, rec.best_distance, rec.best_angle)
    final = state.metrics[-1] if state.metrics else None
    manifest = {
        "scenario": scenario.name,
        "planner": planner,
        "seed": mission.seed,
        "budget_s": mission.budget,
        "mission_time_s": state.clock,
        "wall_time_s": round(_time.perf_counter() - wall0, 3),
        "final_cumulative_inspected_pct": final.cumulative if final else 0.0,
        "final_per_semantic_pct": {str(j): final.per_semantic.get(j, 0.0) for j in ids} if final else {},
        "avg_resolution_px_cm2": {str(j): final.resolution.get(j, 0.0) for j in ids} if final else {},
        "explored_volume_m3": final.explored_volume if final else 0.0,
        "derived": {"l_max_m": mission.l_max, "hole_min_perimeter_m": mission.hole_params.min_perimeter},
        "acceptance_targets": {"swap_min_pct": 95.0, "explore_only_max_pct": 70.0},
        "parameters": scenario.model_dump(mode="json"),
        "versions": {
            "semexplore": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
            "pydantic": pydantic.__version__,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return state
