"""Per-semantic records: point accumulation, meshing and inspection marks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import FrustumModel
from .mesh import TriangleMesh, marching_tetrahedra


def max_view_distance(r_min: float, camera: FrustumModel) -> float:
    """Largest distance at which a fronto-parallel surface still gets ``r_min`` px/cm^2.

    A pinhole camera spreads W*H pixels over a (2 d tan(F_h/2)) x (2 d tan(F_v/2))
    patch at distance d.
    """
    if r_min <= 0:
        raise ValueError("r_min must be positive")
    if camera.width is None or camera.height is None:
        raise ValueError("camera model needs pixel counts")
    r_m2 = r_min * 1e4
    th = math.tan(math.radians(camera.h_fov) / 2.0)
    tv = math.tan(math.radians(camera.v_fov) / 2.0)
    return math.sqrt(camera.width * camera.height / (4.0 * r_m2 * th * tv))


def resolution_at(distance, camera: FrustumModel):
    """Pixel density in px/cm^2 of a fronto-parallel surface at ``distance``."""
    th = math.tan(math.radians(camera.h_fov) / 2.0)
    tv = math.tan(math.radians(camera.v_fov) / 2.0)
    d = np.asarray(distance, dtype=float)
    with np.errstate(divide="ignore"):
        return camera.width * camera.height / (4.0 * d * d * th * tv) / 1e4


@dataclass
class MeshingParams:
    cell: float = 0.1  # subsample cell and meshing grid spacing
    normal_radius_cells: float = 2.5
    min_points: int = 4


@dataclass
class SemanticRecord:
    id: int
    cell: float
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    view_dirs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    mesh: TriangleMesh = field(default_factory=TriangleMesh)
    inspected: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    best_distance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    best_angle: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hole_time_used: float = 0.0
    point_version: int = 0
    mesh_version: int = 0
    # Positions of every face ever marked inspected, with its normal and best
    # (d, angle); used to carry marks across rebuilds.
    marked_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    marked_normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    marked_quality: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    raw_observations: int = 0
    _cells: set = field(default_factory=set, repr=False)
    _meshed_point_version: int = -1

    @property
    def n_inspected(self) -> int:
        return int(self.inspected.sum())

    def meshes_stale(self) -> bool:
        return self._meshed_point_version != self.point_version


def accumulate_points(record: SemanticRecord, points, sensor_origin) -> int:
    """Append points and voxel-subsample; the first point seen in a cell survives.

    Returns the number of points added.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    record.raw_observations += len(pts)
    if len(pts) == 0:
        return 0
    keys = np.floor(pts / record.cell).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first = np.sort(first)
    new = [i for i in first.tolist() if tuple(keys[i].tolist()) not in record._cells]
    if not new:
        return 0
    for i in new:
        record._cells.add(tuple(keys[i].tolist()))
    add = pts[new]
    v = np.asarray(sensor_origin, dtype=float) - add
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    record.points = np.concatenate([record.points, add])
    record.view_dirs = np.concatenate([record.view_dirs, v])
    record.point_version += 1
    return len(new)


def estimate_normals(points: np.ndarray, view_dirs: np.ndarray, radius: float, tree=None,
                     min_view_cos: float = 0.2, max_flatness: float = 0.05) -> np.ndarray:
    """PCA normals over a fixed-radius neighbourhood, oriented toward the sensor.

    The viewing ray decides the sign only where the neighbourhood is planar
    (smallest over middle eigenvalue below ``max_flatness``) and the ray is
    not grazing. Elsewhere, typically at edges and corners, the sign is taken
    from already oriented neighbours, growing outward pass by pass.
    """
    tree = cKDTree(points) if tree is None else tree
    nbrs = tree.query_ball_point(points, radius)
    normals = view_dirs.copy()
    flatness = np.ones(len(points))
    counts = np.array([len(n) for n in nbrs])
    ok = np.flatnonzero(counts >= 3)
    if len(ok):
        covs = np.empty((len(ok), 3, 3))
        for k, i in enumerate(ok.tolist()):
            q = points[nbrs[i]]
            q = q - q.mean(axis=0)
            covs[k] = q.T @ q
        vals, vecs = np.linalg.eigh(covs)
        normals[ok] = vecs[:, :, 0]
        flatness[ok] = vals[:, 0] / np.maximum(vals[:, 1], 1e-12)
    dots = np.einsum("ij,ij->i", normals, view_dirs)
    normals[dots < 0] *= -1
    settled = (flatness < max_flatness) & (np.abs(dots) >= min_view_cos)
    pending = np.flatnonzero(~settled)
    while len(pending):
        left, done = [], []
        for i in pending.tolist():
            nb = [j for j in nbrs[i] if settled[j]]
            if not nb:
                left.append(i)
                continue
            if normals[i] @ normals[nb].sum(axis=0) < 0:
                normals[i] = -normals[i]
            done.append(i)
        if not done:
            break
        settled[done] = True
        pending = np.asarray(left, dtype=np.int64)
    return normals


def implicit_distance(x: np.ndarray, points: np.ndarray, normals: np.ndarray, tree: cKDTree,
                      bandwidth: float, k: int = 16) -> np.ndarray:
    """Gaussian-weighted average of point-to-plane distances over the k nearest samples.

    Unlike the single nearest sample's plane, the blend is continuous, so
    sign changes only happen near the sampled surface.
    """
    k = min(k, len(points))
    d, nn = tree.query(x, k=k)
    if k == 1:
        d, nn = d[:, None], nn[:, None]
    w = np.exp(-(d / bandwidth) ** 2) + 1e-300
    plane = np.einsum("nkj,nkj->nk", x[:, None, :] - points[nn], normals[nn])
    return (w * plane).sum(axis=1) / w.sum(axis=1)


def reconstruct_surface(points: np.ndarray, view_dirs: np.ndarray, cell: float,
                        normal_radius: float | None = None) -> TriangleMesh:
    """Signed-distance meshing restricted to cells near observed points.

    The field at each lattice node is a locally weighted point-to-plane
    distance; only cubes whose center lies within one cube diagonal of a
    sample are triangulated, so unobserved regions stay open.
    """
    if len(points) < 4:
        return TriangleMesh()
    radius = normal_radius if normal_radius is not None else 2.5 * cell
    tree = cKDTree(points)
    normals = estimate_normals(points, view_dirs, radius, tree)
    lo = np.floor(points.min(axis=0) / cell).astype(np.int64) - 2
    hi = np.floor(points.max(axis=0) / cell).astype(np.int64) + 3
    shape = tuple((hi - lo + 1).tolist())
    origin = lo * cell
    cell_centers = origin + cell * (np.indices(tuple(s - 1 for s in shape)).reshape(3, -1).T + 0.5)
    dc, _ = tree.query(cell_centers, distance_upper_bound=cell * math.sqrt(3.0))
    mask = np.isfinite(dc).reshape(tuple(s - 1 for s in shape))
    if not mask.any():
        return TriangleMesh()
    # only nodes of supported cells need a field value
    node_mask = np.zeros(shape, bool)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                node_mask[dx:dx + shape[0] - 1, dy:dy + shape[1] - 1, dz:dz + shape[2] - 1] |= mask
    nodes = np.argwhere(node_mask)
    npos = origin + cell * nodes
    sd = implicit_distance(npos, points, normals, tree, bandwidth=2.0 * cell)
    # keep values off exact zero so every crossing is strictly inside an edge
    tiny = 1e-6 * cell
    sd = np.where(np.abs(sd) < tiny, np.where(sd < 0, -tiny, tiny), sd)
    sdf = np.full(shape, cell, dtype=float)
    sdf[tuple(nodes.T)] = sd
    return marching_tetrahedra(sdf, mask, origin, cell)


def rebuild_mesh(record: SemanticRecord, params: MeshingParams | None = None) -> bool:
    """Re-mesh the record's cloud and carry inspection marks over by centroid proximity.

    Returns True when a new mesh was built.
    """
    if not record.meshes_stale():
        return False
    params = params or MeshingParams(cell=record.cell)
    if len(record.points) < params.min_points:
        mesh = TriangleMesh()
    else:
        mesh = reconstruct_surface(record.points, record.view_dirs, record.cell,
                                   params.normal_radius_cells * record.cell)
    mesh.check_edge_invariant()
    n = mesh.n_faces
    record.mesh = mesh
    record.inspected = np.zeros(n, bool)
    record.best_distance = np.full(n, np.inf)
    record.best_angle = np.full(n, np.inf)
    if n and len(record.marked_points):
        d, k = cKDTree(record.marked_points).query(mesh.centroids, distance_upper_bound=record.cell)
        hit = np.isfinite(d)
        record.inspected[hit] = True
        record.best_distance[hit] = record.marked_quality[k[hit], 0]
        record.best_angle[hit] = record.marked_quality[k[hit], 1]
    record.mesh_version += 1
    record._meshed_point_version = record.point_version
    return True


def quality_mask(distances, angles, l_max: float, theta_max: float) -> np.ndarray:
    """Inspection quality: distance within l_max (inclusive), angle below theta_max (strict)."""
    d = np.asarray(distances, dtype=float)
    a = np.asarray(angles, dtype=float)
    return (d <= l_max) & (a < theta_max)


def mark_inspected(record: SemanticRecord, face_ids, distances, angles, l_max: float, theta_max: float) -> int:
    """Mark faces observed at quality; returns the number of newly inspected faces."""
    f = np.asarray(face_ids, dtype=np.int64)
    if len(f) == 0:
        return 0
    d = np.asarray(distances, dtype=float)
    a = np.asarray(angles, dtype=float)
    ok = quality_mask(d, a, l_max, theta_max)
    f, d, a = f[ok], d[ok], a[ok]
    if len(f) == 0:
        return 0
    np.minimum.at(record.best_distance, f, d)
    np.minimum.at(record.best_angle, f, a)
    newly = np.unique(f[~record.inspected[f]])
    record.inspected[f] = True
    if len(newly):
        record.marked_points = np.concatenate([record.marked_points, record.mesh.centroids[newly]])
        record.marked_normals = np.concatenate([record.marked_normals, record.mesh.normals[newly]])
        record.marked_quality = np.concatenate(
            [record.marked_quality, np.stack([record.best_distance[newly], record.best_angle[newly]], 1)])
    return len(newly)
