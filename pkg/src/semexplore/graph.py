"""Collision-free sampled planning graphs with time-weighted shortest paths."""
from __future__ import annotations

import heapq
import math
from typing import Callable, Iterable

import numpy as np

from .geometry import Configuration, yaw_towards
from .kinematics import Kinematics
from .voxels import OccupancyGrid, RobotBody


class GraphIsolationError(RuntimeError):
    """No sampled vertex could be connected to the root."""


class PlanGraph:
    def __init__(self, root: Configuration, kin: Kinematics):
        self.kin = kin
        self.vertices: list[Configuration] = []
        self.adj: list[dict[int, float]] = []
        self.gains: dict[int, float] = {}
        self._buf = np.zeros((64, 3))
        self.root = self.add_vertex(root)

    def __len__(self):
        return len(self.vertices)

    @property
    def positions(self) -> np.ndarray:
        return self._buf[:len(self.vertices)]

    def add_vertex(self, conf: Configuration) -> int:
        n = len(self.vertices)
        if n == len(self._buf):
            self._buf = np.concatenate([self._buf, np.zeros_like(self._buf)])
        self._buf[n] = conf.position
        self.vertices.append(conf)
        self.adj.append({})
        return n

    def set_vertex(self, i: int, conf: Configuration) -> None:
        self.vertices[i] = conf
        self._buf[i] = conf.position
        for j in self.adj[i]:
            w = self.kin.segment_time(self.vertices[i], self.vertices[j])
            self.adj[i][j] = w
            self.adj[j][i] = w

    def add_edge(self, i: int, j: int) -> float:
        w = self.kin.segment_time(self.vertices[i], self.vertices[j])
        self.adj[i][j] = w
        self.adj[j][i] = w
        return w

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nb in enumerate(self.adj) for j in sorted(nb) if i < j]

    def nearest(self, p, k: int | None = None, radius: float = math.inf, exclude: Iterable[int] = ()) -> list[int]:
        """Vertex ids by increasing distance (ties by id), within ``radius``."""
        if not self.vertices:
            return []
        d = np.linalg.norm(self.positions - np.asarray(p, dtype=float), axis=1)
        order = np.lexsort((np.arange(len(d)), d))
        ex = set(exclude)
        out = [int(i) for i in order if d[i] <= radius and int(i) not in ex]
        return out if k is None else out[:k]

    def dijkstra(self, source: int, by_length: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Single-source shortest paths by execution time, or by metric length."""
        n = len(self.vertices)
        pos = self.positions
        dist = np.full(n, math.inf)
        prev = np.full(n, -1, np.int64)
        dist[source] = 0.0
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v in sorted(self.adj[u]):
                w = float(np.linalg.norm(pos[u] - pos[v])) if by_length else self.adj[u][v]
                nd = d + w
                if nd < dist[v] - 1e-12:
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        return dist, prev

    @staticmethod
    def walk_back(prev: np.ndarray, target: int) -> list[int]:
        path = [target]
        while prev[path[-1]] >= 0:
            path.append(int(prev[path[-1]]))
        return path[::-1]

    def shortest_path(self, a: int, b: int) -> list[int] | None:
        dist, prev = self.dijkstra(a)
        if not math.isfinite(dist[b]):
            return None
        return self.walk_back(prev, b)

    def configs(self, ids: Iterable[int]) -> list[Configuration]:
        return [self.vertices[i] for i in ids]

    def is_connected(self) -> bool:
        dist, _ = self.dijkstra(self.root)
        return bool(np.all(np.isfinite(dist)))

    def try_connect(self, idx: int, grid: OccupancyGrid, body: RobotBody, radius: float,
                    max_neighbors: int, candidates: list[int] | None = None) -> int:
        """Connect vertex ``idx`` to up to ``max_neighbors`` nearest vertices with free edges."""
        near = candidates if candidates is not None else self.nearest(
            self.vertices[idx].position, max_neighbors, radius, exclude=[idx])
        if not near:
            return 0
        starts = np.repeat(self.vertices[idx].position[None, :], len(near), axis=0)
        ends = self.positions[near]
        ok = grid.paths_free(starts, ends, body)
        for j, good in zip(near, ok):
            if good:
                self.add_edge(idx, j)
        return int(ok.sum())

    def insert(self, conf: Configuration, grid: OccupancyGrid, body: RobotBody, radius: float,
               max_neighbors: int) -> int | None:
        """Add ``conf`` if it can be joined to the graph; returns its id or None."""
        near = self.nearest(conf.position, max_neighbors, radius)
        if not near:
            return None
        starts = np.repeat(conf.position[None, :], len(near), axis=0)
        ok = grid.paths_free(starts, self.positions[near], body)
        if not ok.any():
            return None
        i = self.add_vertex(conf)
        for j, good in zip(near, ok):
            if good:
                self.add_edge(i, j)
        return i

    def merge(self, other: "PlanGraph", grid: OccupancyGrid, body: RobotBody, snap: float = 1e-6) -> dict[int, int]:
        """Copy vertices and edges of ``other`` into this graph; returns the id map."""
        mapping: dict[int, int] = {}
        for i, v in enumerate(other.vertices):
            near = self.nearest(v.position, 1, snap)
            mapping[i] = near[0] if near else self.add_vertex(v)
        for i, j in other.edges():
            a, b = mapping[i], mapping[j]
            if a != b and b not in self.adj[a]:
                self.add_edge(a, b)
        return mapping


def sample_uniform(lo, hi, n: int, rng: np.random.Generator) -> np.ndarray:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    return lo + rng.random((n, 3)) * (hi - lo)


def grow_graph(graph: PlanGraph, grid: OccupancyGrid, body: RobotBody, candidates: np.ndarray,
               n_samples: int, radius: float, max_neighbors: int,
               yaw_fn: Callable[[np.ndarray], float], anchor=None) -> list[int]:
    """Add collision-free candidate positions, nearest-to-anchor first.

    At most ``n_samples`` free candidates are considered; each joins the graph
    through up to ``max_neighbors`` nearest vertices. Candidates that cannot
    connect yet are retried until a full pass adds nothing.
    """
    if len(candidates) == 0:
        return []
    free = grid.paths_free(candidates, candidates, body)
    pts = candidates[free][:n_samples]
    anchor = graph.vertices[graph.root].position if anchor is None else np.asarray(anchor, float)
    order = np.lexsort((np.arange(len(pts)), np.linalg.norm(pts - anchor, axis=1)))
    added = []
    pending = [int(k) for k in order]
    # candidates that fail to connect are retried while the graph keeps growing
    while pending:
        left = []
        for k in pending:
            p = pts[k]
            i = graph.insert(Configuration.at(p, yaw_fn(p)), grid, body, radius, max_neighbors)
            if i is None:
                left.append(k)
            else:
                added.append(i)
        if len(left) == len(pending):
            break
        pending = left
    return added


def build_local_graph(grid: OccupancyGrid, start: Configuration, lo, hi, n_samples: int, radius: float,
                      max_neighbors: int, body: RobotBody, kin: Kinematics, rng: np.random.Generator,
                      attempts_factor: int = 20) -> PlanGraph:
    """Dense random graph rooted at ``start`` inside the box [lo, hi] clipped to the grid."""
    lo = np.maximum(np.asarray(lo, float), grid.origin)
    hi = np.minimum(np.asarray(hi, float), grid.upper)
    graph = PlanGraph(start, kin)
    cand = sample_uniform(lo, hi, n_samples * attempts_factor, rng)
    root = start.position
    added = grow_graph(graph, grid, body, cand, n_samples, radius, max_neighbors,
                       lambda p: yaw_towards(root, p))
    if not added:
        raise GraphIsolationError("no sample could be connected to the start configuration")
    return graph
