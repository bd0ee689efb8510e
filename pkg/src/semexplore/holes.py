"""Viewpoint planning that closes holes in semantic meshes with the depth sensor."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .geometry import Configuration, FrustumModel, in_frustum, sample_spherical_many, yaw_towards
from .graph import PlanGraph, grow_graph, sample_uniform
from .mesh import BoundaryEdge, TriangleMesh, extract_boundary_edges, filter_small_holes
from .voxels import OccupancyGrid, RobotBody


@dataclass(frozen=True)
class HoleParams:
    samples_per_edge: int = 64
    d_v_max: float = 4.0
    theta_v_max: float = math.radians(75.0)
    min_perimeter: float = 0.6
    time_budget: float = 120.0
    connect_radius: float = 2.5
    max_neighbors: int = 5
    graph_samples: int = 150
    occlusion_tail: float = 0.5


@dataclass
class HoleViewpoint:
    conf: Configuration
    edge: int
    theta_v: float
    links: list[int] = field(default_factory=list)


def select_closest_semantic(centroids: Mapping[int, np.ndarray], position) -> int:
    """Semantic whose mesh centroid is nearest; ties go to the lower id."""
    if not centroids:
        raise ValueError("no semantics to choose from")
    p = np.asarray(position, dtype=float)
    return min(sorted(centroids), key=lambda j: float(np.linalg.norm(np.asarray(centroids[j]) - p)))


def tangent_vector(mesh: TriangleMesh, edge: BoundaryEdge) -> np.ndarray:
    """In-plane unit vector perpendicular to the edge, pointing away from its face."""
    a, b = edge.vertices
    va, vb = mesh.vertices[a], mesh.vertices[b]
    n = mesh.normals[edge.face]
    t = np.cross(n, vb - va)
    norm = np.linalg.norm(t)
    if norm < 1e-12:
        return np.zeros(3)
    t /= norm
    third = [v for v in mesh.faces[edge.face].tolist() if v not in (a, b)][0]
    if np.dot(t, mesh.vertices[third] - edge.midpoint) > 0:
        t = -t
    return t


def edge_view_angle(midpoint, tangent, position) -> float:
    v = np.asarray(position, dtype=float) - midpoint
    d = np.linalg.norm(v)
    if d < 1e-9 or np.linalg.norm(tangent) < 1e-12:
        return math.pi
    return math.acos(max(-1.0, min(1.0, float(np.dot(v, tangent) / d))))


def open_edges(mesh: TriangleMesh, min_perimeter: float) -> list[BoundaryEdge]:
    loops = filter_small_holes(extract_boundary_edges(mesh), min_perimeter)
    return [e for lp in loops for e in lp.edges]


def edge_view_angles(midpoint, tangent, positions) -> np.ndarray:
    v = np.asarray(positions, dtype=float) - midpoint
    d = np.linalg.norm(v, axis=1)
    if np.linalg.norm(tangent) < 1e-12:
        return np.full(len(v), math.pi)
    c = (v @ tangent) / np.maximum(d, 1e-300)
    out = np.arccos(np.clip(c, -1.0, 1.0))
    out[d < 1e-9] = math.pi
    return out


def calculate_viewpoints(edges: list[BoundaryEdge], tangents: np.ndarray, grid: OccupancyGrid,
                         graph: PlanGraph, body: RobotBody, depth: FrustumModel,
                         rng: np.random.Generator, params: HoleParams) -> list[HoleViewpoint]:
    """Per edge, the lowest-angle admissible sample that links to the graph.

    Admissible samples satisfy theta_v < theta_v_max, see the edge midpoint
    inside the depth frustum without an occupied voxel in between, are
    collision-free and connect to the graph by a free edge.
    """
    out = []
    lo, hi = grid.origin, grid.upper
    for k, e in enumerate(edges):
        pts = sample_spherical_many(e.midpoint, params.d_v_max, params.samples_per_edge, rng)
        th = edge_view_angles(e.midpoint, tangents[k], pts)
        keep = (th < params.theta_v_max) & np.all((pts >= lo) & (pts <= hi), axis=1)
        idx = np.flatnonzero(keep)
        if len(idx) == 0:
            continue
        idx = idx[np.argsort(th[idx], kind="stable")]
        free = grid.paths_free(pts[idx], pts[idx], body)
        for i in idx[free]:
            s = Configuration.at(pts[i], yaw_towards(pts[i], e.midpoint))
            if not in_frustum(s, depth, e.midpoint):
                continue
            if grid.segments_occluded(s.position, e.midpoint[None, :], params.occlusion_tail)[0]:
                continue
            near = graph.nearest(s.position, params.max_neighbors, params.connect_radius)
            if not near:
                continue
            ok = grid.paths_free(np.repeat(s.position[None, :], len(near), 0), graph.positions[near], body)
            links = [j for j, g in zip(near, ok) if g]
            if links:
                out.append(HoleViewpoint(s, k, float(th[i]), links))
                break
    return out


def covers(vp: HoleViewpoint, edge: BoundaryEdge, tangent: np.ndarray, params: HoleParams) -> bool:
    return (float(np.linalg.norm(vp.conf.position - edge.midpoint)) <= params.d_v_max
            and edge_view_angle(edge.midpoint, tangent, vp.conf.position) < params.theta_v_max)


def reduce_viewpoints(candidates: list[HoleViewpoint], edges: list[BoundaryEdge], tangents: np.ndarray,
                      params: HoleParams) -> list[HoleViewpoint]:
    """Greedy reduction: keep a viewpoint, drop every candidate whose edge it also covers."""
    remaining = list(candidates)
    selected = []
    while remaining:
        v = remaining.pop(0)
        selected.append(v)
        remaining = [w for w in remaining if not covers(v, edges[w.edge], tangents[w.edge], params)]
    return selected


def closest_viewpoint(viewpoints: list[HoleViewpoint], graph: PlanGraph, source: int):
    """(viewpoint, graph path ids to its link, length) with the least metric path length."""
    dist, prev = graph.dijkstra(source, by_length=True)
    best = None
    for vp in viewpoints:
        for j in vp.links:
            if not math.isfinite(dist[j]):
                continue
            L = dist[j] + float(np.linalg.norm(graph.positions[j] - vp.conf.position))
            if best is None or L < best[2] - 1e-12:
                best = (vp, j, L)
    if best is None:
        return None
    vp, j, L = best
    return vp, graph.walk_back(prev, j), L


def extend_around(graph: PlanGraph, grid: OccupancyGrid, body: RobotBody, lo, hi, anchor,
                  rng: np.random.Generator, params: HoleParams) -> int:
    """Densify the hole-coverage graph inside a box around a semantic."""
    lo = np.maximum(np.asarray(lo, float), grid.origin)
    hi = np.minimum(np.asarray(hi, float), grid.upper)
    cand = sample_uniform(lo, hi, params.graph_samples * 10, rng)
    centre = (lo + hi) / 2.0
    added = grow_graph(graph, grid, body, cand, params.graph_samples, params.connect_radius,
                       params.max_neighbors, lambda p: yaw_towards(p, centre), anchor=anchor)
    return len(added)


@dataclass
class HoleTraceRow:
    iteration: int
    semantic: int
    pose: Configuration
    theta_v: float
    edges_before: int
    edges_after: int


def write_hole_trace(path, rows: list[HoleTraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "semantic", "x", "y", "z", "yaw", "theta_v", "edges_before", "edges_after"])
        for r in rows:
            w.writerow([r.iteration, r.semantic, f"{r.pose.x:.6f}", f"{r.pose.y:.6f}", f"{r.pose.z:.6f}",
                        f"{r.pose.yaw:.6f}", f"{r.theta_v:.6f}", r.edges_before, r.edges_after])
