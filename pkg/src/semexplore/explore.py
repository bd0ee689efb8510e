"""Volumetric and surface-gain exploration over local and global sampled graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Configuration, FrustumModel
from .graph import PlanGraph
from .kinematics import densify
from .voxels import OccupancyGrid, RobotBody

VOLUMETRIC = "volumetric"
SURFACE = "surface"


class ZeroGainError(RuntimeError):
    """No vertex of the graph offers a significant gain."""


@dataclass(frozen=True)
class GainModel:
    mode: str
    frustum: FrustumModel
    yaw_candidates: int = 1

    def __post_init__(self):
        if self.mode not in (VOLUMETRIC, SURFACE):
            raise ValueError(f"unknown gain mode {self.mode!r}")

    def gain(self, grid: OccupancyGrid, conf: Configuration) -> int:
        if self.mode == VOLUMETRIC:
            return grid.volumetric_gain(conf, self.frustum)
        return grid.surface_gain(conf, self.frustum)

    def best(self, grid: OccupancyGrid, conf: Configuration) -> tuple[int, Configuration]:
        """Gain at ``conf``, trying evenly spaced yaws for directional sensors."""
        if self.yaw_candidates <= 1 or self.frustum.omnidirectional:
            return self.gain(grid, conf), conf
        best_g, best_c = -1, conf
        for k in range(self.yaw_candidates):
            c = Configuration(conf.x, conf.y, conf.z, conf.yaw + 2 * math.pi * k / self.yaw_candidates)
            g = self.gain(grid, c)
            if g > best_g:
                best_g, best_c = g, c
        return best_g, best_c


def evaluate_gains(graph: PlanGraph, grid: OccupancyGrid, model: GainModel, ids) -> dict[int, int]:
    out = {}
    for i in ids:
        g, c = model.best(grid, graph.vertices[i])
        if c.yaw != graph.vertices[i].yaw:
            graph.set_vertex(i, c)
        graph.gains[i] = g
        out[i] = g
    return out


def select_best(gains: dict[int, int], times: np.ndarray, discount: float, min_gain: float) -> int | None:
    """argmax of gain * exp(-discount * time) over vertices with gain >= min_gain; ties to lower id."""
    best, best_score = None, 0.0
    for i in sorted(gains):
        g = gains[i]
        if g <= 0 or g < min_gain or not math.isfinite(times[i]):
            continue
        s = g * math.exp(-discount * times[i])
        if best is None or s > best_score:
            best, best_score = i, s
    return best


@dataclass
class ExplorationPlan:
    path: list[Configuration]
    target: int
    gain: float
    score: float


def plan_exploration_step(graph: PlanGraph, grid: OccupancyGrid, model: GainModel,
                          discount: float = 0.25, min_gain: float = 1.0) -> ExplorationPlan:
    """Path from the root to the vertex with the best time-discounted gain.

    Gain is counted at the terminal vertex only.
    """
    if len(graph) == 0:
        raise ValueError("empty graph")
    ids = [i for i in range(len(graph)) if i != graph.root]
    gains = evaluate_gains(graph, grid, model, ids)
    times, prev = graph.dijkstra(graph.root)
    best = select_best(gains, times, discount, min_gain)
    if best is None:
        raise ZeroGainError("no vertex with positive gain")
    path = graph.configs(graph.walk_back(prev, best))
    return ExplorationPlan(path, best, gains[best], gains[best] * math.exp(-discount * times[best]))


def update_global_graph(global_graph: PlanGraph, path: list[Configuration], grid: OccupancyGrid,
                        body: RobotBody, rho: float = 1.5, connect_radius: float = 3.0,
                        max_neighbors: int = 5) -> int:
    """Append an executed path to the sparse global graph.

    Path poses closer than ``rho`` to an existing vertex are snapped to it.
    Returns the number of vertices added; a path whose start cannot be
    attached to the graph is rejected and leaves the graph unchanged.
    """
    if not path:
        return 0
    pts = densify(path, rho / 2.0)

    def snap(conf):
        near = global_graph.nearest(conf.position, 1)
        if near and global_graph.vertices[near[0]].distance(conf) < rho:
            return near[0]
        return None

    prev = snap(pts[0])
    if prev is None:
        prev = global_graph.insert(pts[0], grid, body, connect_radius, max_neighbors)
        if prev is None:
            return 0
        added = 1
    else:
        added = 0
    for conf in pts[1:]:
        cur = snap(conf)
        if cur is not None:
            if cur != prev and cur not in global_graph.adj[prev]:
                if grid.is_path_collision_free(global_graph.vertices[prev], global_graph.vertices[cur], body):
                    global_graph.add_edge(prev, cur)
                else:
                    continue
            prev = cur
            continue
        if grid.is_path_collision_free(global_graph.vertices[prev], conf, body):
            cur = global_graph.add_vertex(conf)
            global_graph.add_edge(prev, cur)
        else:
            cur = global_graph.insert(conf, grid, body, connect_radius, max_neighbors)
            if cur is None:
                continue
        added += 1
        prev = cur
    return added


def attach_pose(graph: PlanGraph, conf: Configuration, grid: OccupancyGrid, body: RobotBody,
                radius: float = 3.0, max_neighbors: int = 8) -> int | None:
    """Vertex id for ``conf``, inserting it when no vertex coincides with it."""
    near = graph.nearest(conf.position, 1, 1e-6)
    if near:
        return near[0]
    return graph.insert(conf, grid, body, radius, max_neighbors)


def relocate_to_frontier(global_graph: PlanGraph, grid: OccupancyGrid, model: GainModel,
                         current: Configuration, body: RobotBody, discount: float = 0.25,
                         min_gain: float = 1.0, exclude_radius: float = 0.0) -> list[Configuration] | None:
    """Shortest global-graph path to the best-scoring frontier vertex, or None when exhausted."""
    if len(global_graph) == 0:
        raise ValueError("empty global graph")
    src = attach_pose(global_graph, current, grid, body)
    if src is None:
        return None
    d = np.linalg.norm(global_graph.positions - current.position, axis=1)
    ids = [i for i in range(len(global_graph)) if i != src and d[i] >= exclude_radius]
    gains = evaluate_gains(global_graph, grid, model, ids)
    times, prev = global_graph.dijkstra(src)
    best = select_best(gains, times, discount, min_gain)
    if best is None:
        return None
    return global_graph.configs(global_graph.walk_back(prev, best))
