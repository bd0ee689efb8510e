"""Ground-truth synthetic world and simulated depth / camera sensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _kernels as K
from .geometry import Configuration, FrustumModel, in_frustum_many, viewing_angles_many
from .voxels import OccupancyGrid, frustum_directions

# Face keys for axis-aligned boxes.
BOX_FACES = ("-x", "+x", "-y", "+y", "-z", "+z")


def box_triangles(lo, hi, skip_faces=()) -> np.ndarray:
    """Twelve outward-wound triangles of an axis-aligned box."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    c = np.array([[(hi if (i >> a) & 1 else lo)[a] for a in range(3)] for i in range(8)])
    # corner i has bit a set when coordinate a is at hi
    quads = {
        "-x": (0, 4, 6, 2), "+x": (1, 3, 7, 5),
        "-y": (0, 1, 5, 4), "+y": (2, 6, 7, 3),
        "-z": (0, 2, 3, 1), "+z": (4, 5, 7, 6),
    }
    tris = []
    for key in BOX_FACES:
        if key in skip_faces:
            continue
        a, b, cc, d = quads[key]
        tris.append([c[a], c[b], c[cc]])
        tris.append([c[a], c[cc], c[d]])
    return np.asarray(tris, dtype=float).reshape(-1, 3, 3)


@dataclass
class World:
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    triangles: np.ndarray  # (n, 3, 3)
    labels: np.ndarray  # (n,) 0 = unlabelled, j >= 1 semantic id

    def __post_init__(self):
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=float)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=float)
        self.triangles = np.ascontiguousarray(np.asarray(self.triangles, dtype=float).reshape(-1, 3, 3))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != len(self.triangles):
            raise ValueError("one label per triangle required")
        if np.any(np.any(self.bounds_hi <= self.bounds_lo)):
            raise ValueError("world bounds are empty")
        tol = 1e-9
        pts = self.triangles.reshape(-1, 3)
        if len(pts) and (np.any(pts < self.bounds_lo - tol) or np.any(pts > self.bounds_hi + tol)):
            raise ValueError("triangles must lie inside the world bounds")
        ids = self.semantic_ids
        if ids and ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"semantic ids must be contiguous from 1, got {ids}")

    @classmethod
    def from_boxes(cls, bounds_lo, bounds_hi, boxes=(), enclose: bool = True) -> "World":
        """Boxes are (lo, hi, label) tuples; ``enclose`` adds the bounding walls."""
        tris, labels = [], []
        if enclose:
            t = box_triangles(bounds_lo, bounds_hi)
            tris.append(t)
            labels.append(np.zeros(len(t), np.int64))
        for lo, hi, label in boxes:
            t = box_triangles(lo, hi)
            tris.append(t)
            labels.append(np.full(len(t), label, np.int64))
        if tris:
            return cls(bounds_lo, bounds_hi, np.concatenate(tris), np.concatenate(labels))
        return cls(bounds_lo, bounds_hi, np.zeros((0, 3, 3)), np.zeros(0, np.int64))

    @property
    def semantic_ids(self) -> list[int]:
        return sorted(int(v) for v in np.unique(self.labels) if v > 0)

    def semantic_triangles(self, j: int) -> np.ndarray:
        return self.triangles[self.labels == j]

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.bounds_lo) and np.all(p <= self.bounds_hi))

    def empty_grid(self, resolution: float) -> OccupancyGrid:
        return OccupancyGrid.from_bounds(self.bounds_lo, self.bounds_hi, resolution)

    def cast(self, origin, dirs, max_range: float):
        if len(self.triangles) == 0:
            n = len(dirs)
            return np.full(n, np.inf), np.full(n, -1, np.int64)
        return K.cast_rays(np.asarray(origin, float), np.ascontiguousarray(dirs, float),
                           self.triangles, float(max_range))

    def occluded(self, origin, targets, tol: float) -> np.ndarray:
        if len(self.triangles) == 0 or len(targets) == 0:
            return np.zeros(len(targets), bool)
        return K.occluded_by_triangles(np.asarray(origin, float), np.ascontiguousarray(targets, float),
                                       self.triangles, float(tol))


@dataclass
class DepthScan:
    origin: np.ndarray
    directions: np.ndarray
    ranges: np.ndarray  # d_max for misses
    hit: np.ndarray  # bool
    labels: np.ndarray  # semantic id per ray, 0 for unlabelled or miss

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.directions * self.ranges[:, None]

    def labelled(self, j: int) -> np.ndarray:
        return self.points[self.hit & (self.labels == j)]


def render_depth(world: World, pose: Configuration, frustum: FrustumModel,
                 resolution_deg: float = 1.0) -> DepthScan:
    """Labelled ray-cast depth scan; one ray per angular cell of the frustum."""
    dirs = frustum_directions(pose, frustum, resolution_deg)
    t, idx = world.cast(pose.position, dirs, frustum.d_max)
    hit = idx >= 0
    ranges = np.where(hit, t, frustum.d_max)
    labels = np.zeros(len(dirs), np.int64)
    labels[hit] = world.labels[idx[hit]]
    return DepthScan(pose.position, dirs, ranges, hit, labels)


@dataclass
class CameraObservation:
    """Faces of reconstructed meshes visible from one camera pose.

    Arrays are parallel; quality thresholds are not applied here.
    """

    semantic_ids: np.ndarray
    face_ids: np.ndarray
    distances: np.ndarray
    angles: np.ndarray

    def records(self) -> list[tuple[int, int, float, float]]:
        return [(int(j), int(f), float(d), float(a)) for j, f, d, a in
                zip(self.semantic_ids, self.face_ids, self.distances, self.angles)]

    def for_semantic(self, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.semantic_ids == j
        return self.face_ids[m], self.distances[m], self.angles[m]

    def __len__(self):
        return len(self.face_ids)


def render_camera_observation(world: World, meshes: Mapping[int, object], pose: Configuration,
                              frustum: FrustumModel, occlusion_tol: float = 0.3) -> CameraObservation:
    """Report every mesh face whose centroid is in the frustum and not hidden by world geometry.

    A world triangle hides a centroid only if the hit lies more than
    ``occlusion_tol`` before it; reconstructed centroids sit within a few
    centimetres of the true surface they came from.
    """
    sids, fids, ds, angs = [], [], [], []
    for j in sorted(meshes):
        mesh = meshes[j]
        if mesh is None or mesh.n_faces == 0:
            continue
        cand = np.flatnonzero(in_frustum_many(pose, frustum, mesh.centroids))
        if len(cand) == 0:
            continue
        occ = world.occluded(pose.position, mesh.centroids[cand], occlusion_tol)
        cand = cand[~occ]
        d, a = viewing_angles_many(mesh.centroids[cand], mesh.normals[cand], pose.position)
        sids.append(np.full(len(cand), j, np.int64))
        fids.append(cand)
        ds.append(d)
        angs.append(a)
    if not sids:
        z = np.zeros(0)
        return CameraObservation(np.zeros(0, np.int64), np.zeros(0, np.int64), z, z.copy())
    return CameraObservation(np.concatenate(sids), np.concatenate(fids), np.concatenate(ds), np.concatenate(angs))
