"""Camera inspection planning: visibility sets, randomized greedy cover and tour ordering."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Configuration, FrustumModel, fit_oriented_box, in_frustum_many, viewing_angles_many, yaw_towards
from .graph import GraphIsolationError, PlanGraph, grow_graph
from .kinematics import Kinematics
from .mesh import TriangleMesh
from .semantic import quality_mask
from .tsp import solve_open_tour
from .voxels import OccupancyGrid, RobotBody


class NoCoverableFacesError(RuntimeError):
    """No graph vertex can inspect any remaining face."""


@dataclass(frozen=True)
class InspectionParams:
    l_max: float
    theta_max: float  # radians
    k: int = 10
    eta: float = 0.2
    n_samples: int = 400
    connect_radius: float = 1.5
    max_neighbors: int = 8
    occlusion_tail: float = 0.5
    attach_radius: float = 3.0


@dataclass
class VisibilityRecord:
    vertex: int
    faces: frozenset


@dataclass
class InspectionGraph:
    graph: PlanGraph
    visibility: dict[int, VisibilityRecord]
    sampled: list[int]

    def union(self) -> set:
        out: set = set()
        for rec in self.visibility.values():
            out |= rec.faces
        return out


@dataclass
class Candidate:
    index: int
    vertices: list[int]
    order: list[int]
    cost: float


@dataclass
class InspectionPlan:
    path: list[Configuration]
    cost: float
    order: list[int]
    best: int
    candidates: list[Candidate] = field(default_factory=list)
    covered: set = field(default_factory=set)


def face_visibility(conf: Configuration, centroids: np.ndarray, normals: np.ndarray, candidates: np.ndarray,
                    grid: OccupancyGrid, camera: FrustumModel, params: InspectionParams) -> np.ndarray:
    """Subset of ``candidates`` inspectable at quality from ``conf``."""
    if len(candidates) == 0:
        return candidates
    c = centroids[candidates]
    ok = in_frustum_many(conf, camera, c)
    d, a = viewing_angles_many(c, normals[candidates], conf.position)
    with np.errstate(invalid="ignore"):
        ok &= quality_mask(d, a, params.l_max, params.theta_max)
    idx = np.flatnonzero(ok)
    if len(idx):
        occ = grid.segments_occluded(conf.position, c[idx], params.occlusion_tail)
        idx = idx[~occ]
    return candidates[idx]


def build_inspection_graph(mesh: TriangleMesh, inspected: np.ndarray, grid: OccupancyGrid, body: RobotBody,
                           kin: Kinematics, start: Configuration, camera: FrustumModel,
                           rng: np.random.Generator, params: InspectionParams,
                           seed_graph: PlanGraph | None = None) -> InspectionGraph:
    """Collision-free graph in the semantic's box inflated by the inspection range.

    Sampled vertices face the mesh centroid; their visibility is computed over
    the faces not yet inspected.
    """
    if mesh.n_faces == 0:
        raise ValueError("empty mesh")
    graph = PlanGraph(start, kin)
    if seed_graph is not None:
        graph.merge(seed_graph, grid, body)
        if not graph.adj[graph.root]:
            graph.try_connect(graph.root, grid, body, params.attach_radius, params.max_neighbors)
    box = fit_oriented_box(mesh.vertices, margin=params.l_max)
    local = (rng.random((params.n_samples, 3)) * 2.0 - 1.0) * box.half_extents
    pts = box.to_world(local)
    inside = np.all((pts >= grid.origin) & (pts <= grid.upper), axis=1)
    centre = mesh.centroid()
    sampled = grow_graph(graph, grid, body, pts[inside], params.n_samples, params.connect_radius,
                         params.max_neighbors, lambda p: yaw_towards(p, centre), anchor=start.position)
    if not sampled:
        raise GraphIsolationError("no inspection sample connects to the approach configuration")
    todo = np.flatnonzero(~np.asarray(inspected, bool))
    cents, norms = mesh.centroids, mesh.normals
    vis = {}
    for i in sampled:
        f = face_visibility(graph.vertices[i], cents, norms, todo, grid, camera, params)
        vis[i] = VisibilityRecord(i, frozenset(int(x) for x in f))
    return InspectionGraph(graph, vis, sampled)


def select_coverage_vertices(visibility: dict[int, VisibilityRecord], eta: float,
                             rng: np.random.Generator) -> list[int]:
    """Randomized greedy set cover over residual visibilities.

    Each round draws uniformly among the top ``eta`` fraction of vertices by
    residual visibility size (at least one vertex).
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must be in (0, 1]")
    residual = {i: set(r.faces) for i, r in visibility.items() if r.faces}
    chosen = []
    while residual:
        ranked = sorted(residual, key=lambda i: (-len(residual[i]), i))
        top = max(1, math.ceil(eta * len(ranked)))
        pick = ranked[int(rng.integers(top))]
        chosen.append(pick)
        got = residual.pop(pick)
        for i in list(residual):
            residual[i] -= got
            if not residual[i]:
                del residual[i]
    return chosen


class _PathCache:
    def __init__(self, graph: PlanGraph):
        self.graph = graph
        self._runs: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def run(self, src: int):
        if src not in self._runs:
            self._runs[src] = self.graph.dijkstra(src)
        return self._runs[src]

    def cost_matrix(self, nodes: list[int]) -> np.ndarray:
        return np.array([[self.run(a)[0][b] for b in nodes] for a in nodes])

    def expand(self, nodes: list[int]) -> list[int]:
        ids = [nodes[0]]
        for a, b in zip(nodes[:-1], nodes[1:]):
            ids.extend(self.graph.walk_back(self.run(a)[1], b)[1:])
        return ids


def order_vertices(graph: PlanGraph, vertices: list[int], cache: _PathCache | None = None) -> tuple[list[int], float]:
    """Open tour from the graph root through ``vertices``; returns (vertex order, time)."""
    cache = cache or _PathCache(graph)
    nodes = [graph.root] + [v for v in vertices if v != graph.root]
    order, cost = solve_open_tour(cache.cost_matrix(nodes), start=0)
    return [nodes[i] for i in order[1:]], cost


def plan_inspection(ig: InspectionGraph, eta: float, k: int, rng: np.random.Generator) -> InspectionPlan:
    """Best of ``k`` randomized cover-and-order candidates by execution time."""
    if not ig.union():
        raise NoCoverableFacesError("no vertex sees an uninspected face at quality")
    cache = _PathCache(ig.graph)
    cands = []
    for c, sub in enumerate(rng.spawn(k)):
        vc = select_coverage_vertices(ig.visibility, eta, sub)
        order, cost = order_vertices(ig.graph, vc, cache)
        cands.append(Candidate(c, vc, order, cost))
    best = min(cands, key=lambda c: (c.cost, c.index))
    ids = cache.expand([ig.graph.root] + best.order)
    covered = set()
    for v in best.vertices:
        covered |= ig.visibility[v].faces
    return InspectionPlan(ig.graph.configs(ids), best.cost, best.order, best.index, cands, covered)


def write_candidates(path, plans: list[tuple[int, InspectionPlan]]) -> None:
    """Diagnostics CSV with one row per candidate of every planning call."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["call", "semantic", "candidate", "n_vertices", "cost_s", "selected"])
        for call, (sem, plan) in enumerate(plans):
            for c in plan.candidates:
                w.writerow([call, sem, c.index, len(c.vertices), f"{c.cost:.6f}", int(c.index == plan.best)])
