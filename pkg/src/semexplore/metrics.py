"""Coverage metrics against ground truth and residual (unobservable) accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import Configuration, FrustumModel
from .semantic import SemanticRecord, resolution_at
from .voxels import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, RobotBody
from .world import World, render_depth


def subdivide_triangles(tris: np.ndarray, size: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split triangles into sub-triangles with edges no longer than ``size``.

    Returns (centroids, areas, owner index).
    """
    cents, areas, owner = [], [], []
    for t, (a, b, c) in enumerate(np.asarray(tris, dtype=float)):
        longest = max(np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(a - c))
        n = max(1, math.ceil(longest / size))
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
        u, v = b - a, c - a
        # upward sub-triangles (i, j), (i+1, j), (i, j+1); downward ones fill the gaps
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        up = ii + jj <= n - 1
        iu, ju = ii[up], jj[up]
        cu = a + ((iu + 1 / 3)[:, None] * u + (ju + 1 / 3)[:, None] * v) / n
        down = ii + jj <= n - 2
        idn, jdn = ii[down], jj[down]
        cd = a + ((idn + 2 / 3)[:, None] * u + (jdn + 2 / 3)[:, None] * v) / n
        k = len(cu) + len(cd)
        cents.append(np.concatenate([cu, cd]))
        areas.append(np.full(k, area / (n * n)))
        owner.append(np.full(k, t, np.int64))
    if not cents:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0, np.int64)
    return np.concatenate(cents), np.concatenate(areas), np.concatenate(owner)


def triangle_normals(tris: np.ndarray) -> np.ndarray:
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)


class SurfaceLedger:
    """Ground-truth semantic surface split into small patches with sticky inspection flags.

    A patch counts as inspected once a marked reconstructed face lies within
    ``radius`` of it with a normal within ``max_normal_angle`` of its own.
    """

    def __init__(self, world: World, patch_size: float = 0.1, radius: float = 0.15,
                 max_normal_angle: float = math.radians(45.0)):
        self.radius = radius
        self.cos_tol = math.cos(max_normal_angle)
        c, a, s, n = [], [], [], []
        for j in world.semantic_ids:
            tris = world.semantic_triangles(j)
            cj, aj, oj = subdivide_triangles(tris, patch_size)
            c.append(cj)
            a.append(aj)
            s.append(np.full(len(cj), j, np.int64))
            n.append(triangle_normals(tris)[oj])
        self.ids = list(world.semantic_ids)
        self.centers = np.concatenate(c) if c else np.zeros((0, 3))
        self.areas = np.concatenate(a) if a else np.zeros(0)
        self.semantic = np.concatenate(s) if s else np.zeros(0, np.int64)
        self.normals = np.concatenate(n) if n else np.zeros((0, 3))
        self.inspected = np.zeros(len(self.centers), bool)
        self._tree = cKDTree(self.centers) if len(self.centers) else None
        self._consumed: dict[int, int] = {}

    def total_area(self, j: int | None = None) -> float:
        return float(self.areas.sum() if j is None else self.areas[self.semantic == j].sum())

    def mark_near(self, j: int, points: np.ndarray, normals: np.ndarray) -> None:
        if self._tree is None or len(points) == 0:
            return
        for p, n, hits in zip(points, normals, self._tree.query_ball_point(points, self.radius)):
            if not hits:
                continue
            h = np.asarray(hits)
            h = h[(self.semantic[h] == j) & (self.normals[h] @ n >= self.cos_tol)]
            self.inspected[h] = True

    def update(self, records: Mapping[int, SemanticRecord]) -> None:
        """Consume marks added to the records since the previous call."""
        for j, rec in records.items():
            k = self._consumed.get(j, 0)
            if len(rec.marked_points) > k:
                self.mark_near(j, rec.marked_points[k:], rec.marked_normals[k:])
                self._consumed[j] = len(rec.marked_points)

    def percent(self, j: int | None = None) -> float:
        total = self.total_area(j)
        if total <= 0:
            return 0.0
        m = self.inspected if j is None else self.inspected & (self.semantic == j)
        return float(min(100.0, 100.0 * self.areas[m].sum() / total))


@dataclass
class MetricsSample:
    time: float
    explored_volume: float
    cumulative: float
    per_semantic: dict[int, float] = field(default_factory=dict)
    resolution: dict[int, float] = field(default_factory=dict)


def average_resolution(record: SemanticRecord, camera: FrustumModel) -> float:
    """Mean pixel density (px/cm^2) over every face marked so far, at its best distance."""
    if len(record.marked_quality) == 0:
        return 0.0
    d = np.maximum(record.marked_quality[:, 0], 1e-6)
    return float(np.mean(resolution_at(d, camera)))


def compute_metrics(time: float, grid: OccupancyGrid, ledger: SurfaceLedger,
                    records: Mapping[int, SemanticRecord], camera: FrustumModel) -> MetricsSample:
    ledger.update(records)
    per = {j: ledger.percent(j) for j in ledger.ids}
    res = {j: (average_resolution(records[j], camera) if j in records else 0.0) for j in ledger.ids}
    return MetricsSample(time, grid.known_volume(), ledger.percent(), per, res)


# --- residual accounting ------------------------------------------------------

def voxelize_world(world: World, resolution: float) -> OccupancyGrid:
    """Ground-truth grid: voxels touched by any triangle are occupied, the rest free."""
    grid = world.empty_grid(resolution)
    grid.state[:] = FREE
    if len(world.triangles):
        pts, _, _ = subdivide_triangles(world.triangles, resolution / 3.0)
        # include vertices so thin features at triangle corners are not missed
        pts = np.concatenate([pts, world.triangles.reshape(-1, 3)])
        idx = np.floor((pts - grid.origin) / resolution).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(grid.dims) - 1)
        grid.state[idx[:, 0], idx[:, 1], idx[:, 2]] = OCCUPIED
    return grid


def reachable_free(gt: OccupancyGrid, start) -> np.ndarray:
    """Boolean mask of free voxels 6-connected to the start voxel."""
    lab, _ = ndimage.label(gt.state == FREE)
    s = gt.index_of(start)
    if lab[s] == 0:
        return np.zeros(gt.state.shape, bool)
    return lab == lab[s]


def audit_configurations(gt: OccupancyGrid, reach: np.ndarray, body: RobotBody, spacing: float) -> np.ndarray:
    """Lattice positions in reachable free space where the body fits."""
    lo, hi = gt.origin + spacing / 2, gt.upper
    axes = [np.arange(lo[a], hi[a], spacing) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    idx = np.floor((pts - gt.origin) / gt.resolution).astype(np.int64)
    pts = pts[reach[idx[:, 0], idx[:, 1], idx[:, 2]]]
    if len(pts) == 0:
        return pts
    return pts[gt.paths_free(pts, pts, body)]


@dataclass
class ResidualReport:
    volume: float
    surface: float
    n_audit: int
    per_semantic_surface: dict[int, float] = field(default_factory=dict)


def residual_accounting(world: World, grid: OccupancyGrid, start, body: RobotBody, depth: FrustumModel,
                        l_max: float, theta_max: float, ledger: SurfaceLedger | None = None,
                        camera: FrustumModel | None = None, spacing: float = 1.0,
                        depth_resolution_deg: float = 2.0, occlusion_tol: float = 0.05,
                        surface_spacing: float = 0.25) -> ResidualReport:
    """Unknown volume and semantic surface that no audit configuration can observe.

    Audit configurations form lattices over the free space reachable from
    ``start``. A voxel is observable if a depth ray from some configuration of
    the ``spacing`` lattice passes through it. A surface patch is inspectable
    if some configuration of the finer ``surface_spacing`` lattice is within
    ``l_max`` of it, sees it at an angle below ``theta_max`` and has an
    unobstructed line of sight. With a ``camera`` the patch must also fit its
    vertical field of view (yaw is free).
    """
    gt = voxelize_world(world, grid.resolution)
    reach = reachable_free(gt, start)
    confs = audit_configurations(gt, reach, body, spacing)
    seen = world.empty_grid(grid.resolution)
    for p in confs:
        scan = render_depth(world, Configuration.at(p), depth, depth_resolution_deg)
        seen.integrate_depth_scan(p, scan.points, scan.hit)
    residual_vox = (grid.state == UNKNOWN) & (seen.state == UNKNOWN)
    volume = float(residual_vox.sum() * grid.voxel_volume)

    ledger = ledger or SurfaceLedger(world)
    ok = np.zeros(len(ledger.centers), bool)
    sconfs = audit_configurations(gt, reach, body, surface_spacing)
    if len(sconfs) and len(ledger.centers):
        tree = cKDTree(ledger.centers)
        dist, _ = tree.query(sconfs, distance_upper_bound=l_max)
        sconfs = sconfs[np.isfinite(dist)]
        for p, near in zip(sconfs, tree.query_ball_point(sconfs, l_max)):
            if not near:
                continue
            near = np.asarray(near)
            near = near[~ok[near]]
            if len(near) == 0:
                continue
            v = p - ledger.centers[near]
            d = np.linalg.norm(v, axis=1)
            cosang = np.einsum("ij,ij->i", v, ledger.normals[near]) / np.maximum(d, 1e-12)
            good = (d <= l_max) & (cosang > math.cos(theta_max))
            if camera is not None:
                elev = np.arcsin(np.clip(-v[:, 2] / np.maximum(d, 1e-12), -1, 1))
                good &= np.abs(elev) < math.radians(camera.v_fov) / 2
            near = near[good]
            if len(near) == 0:
                continue
            occ = world.occluded(p, ledger.centers[near], occlusion_tol)
            ok[near[~occ]] = True
    per = {j: float(ledger.areas[(ledger.semantic == j) & ~ok].sum()) for j in ledger.ids}
    return ResidualReport(volume, float(sum(per.values())), len(confs), per)
