"""Poses, sensor frustums, oriented boxes and seeded spherical sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

EPS_GEO = 1e-9


class GeometryError(ValueError):
    """Raised for degenerate geometric input (coincident points, collinear clouds)."""


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Configuration:
    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self):
        for v in (self.x, self.y, self.z, self.yaw):
            if not math.isfinite(v):
                raise GeometryError(f"non-finite configuration component: {v}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def at(cls, p, yaw: float = 0.0) -> "Configuration":
        return cls(float(p[0]), float(p[1]), float(p[2]), yaw)

    def looking_at(self, target) -> "Configuration":
        return Configuration(self.x, self.y, self.z, yaw_towards(self.position, target))

    def distance(self, other: "Configuration") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


def yaw_towards(src, dst) -> float:
    dx = float(dst[0]) - float(src[0])
    dy = float(dst[1]) - float(src[1])
    if abs(dx) < EPS_GEO and abs(dy) < EPS_GEO:
        return 0.0
    return math.atan2(dy, dx)


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class FrustumModel:
    """Pyramidal sensor model. Angles in degrees, range in meters.

    ``mount`` is the fixed sensor-to-body rotation; identity means the sensor
    looks along the body x axis.
    """

    h_fov: float
    v_fov: float
    d_max: float
    width: int | None = None
    height: int | None = None
    mount: tuple = field(default=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))

    def __post_init__(self):
        if not 0.0 < self.h_fov <= 360.0:
            raise ValueError(f"h_fov must be in (0, 360], got {self.h_fov}")
        if not 0.0 < self.v_fov < 180.0:
            raise ValueError(f"v_fov must be in (0, 180), got {self.v_fov}")
        if not self.d_max > 0.0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")
        for px in (self.width, self.height):
            if px is not None and px <= 0:
                raise ValueError("pixel counts must be positive")
        m = np.asarray(self.mount, dtype=float)
        if m.shape != (3, 3) or not np.allclose(m @ m.T, np.eye(3), atol=1e-9):
            raise ValueError("mount must be a 3x3 rotation")
        object.__setattr__(self, "mount", tuple(map(tuple, m.tolist())))

    @property
    def mount_matrix(self) -> np.ndarray:
        return np.asarray(self.mount, dtype=float)

    @property
    def omnidirectional(self) -> bool:
        return self.h_fov >= 360.0

    def sensor_to_world(self, pose: Configuration) -> np.ndarray:
        return rot_z(pose.yaw) @ self.mount_matrix


def in_frustum_many(pose: Configuration, frustum: FrustumModel, points) -> np.ndarray:
    """Vectorised frustum membership for an (n, 3) array of points.

    Angular limits are strict, the range limit is inclusive.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = pts - pose.position
    local = rel @ frustum.sensor_to_world(pose)  # rows: R^T p
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    dist = np.sqrt(x * x + y * y + z * z)
    horiz = np.hypot(x, y)
    el = np.degrees(np.arctan2(z, horiz))
    ok = (dist <= frustum.d_max) & (np.abs(el) < frustum.v_fov / 2.0)
    if not frustum.omnidirectional:
        az = np.degrees(np.arctan2(y, x))
        ok &= np.abs(az) < frustum.h_fov / 2.0
    return ok


def in_frustum(pose: Configuration, frustum: FrustumModel, p) -> bool:
    return bool(in_frustum_many(pose, frustum, np.asarray(p, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class Face:
    vertices: tuple[int, int, int]
    centroid: np.ndarray
    normal: np.ndarray
    area: float

    @classmethod
    def from_points(cls, a, b, c, vertices=(0, 1, 2)) -> "Face":
        a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
        cr = np.cross(b - a, c - a)
        n = np.linalg.norm(cr)
        if n < EPS_GEO:
            raise GeometryError("degenerate triangle")
        return cls(tuple(vertices), (a + b + c) / 3.0, cr / n, 0.5 * n)


def viewing_angle(centroid, normal, position) -> float:
    v = np.asarray(position, dtype=float) - np.asarray(centroid, dtype=float)
    d = np.linalg.norm(v)
    if d < EPS_GEO:
        raise GeometryError("viewpoint coincides with face centroid")
    c = float(np.dot(v, normal) / (d * np.linalg.norm(normal)))
    return math.acos(max(-1.0, min(1.0, c)))


def viewing_angle_to_face(face: Face, pose: Configuration) -> float:
    """Angle in [0, pi] between the face normal and the centroid-to-viewpoint ray."""
    return viewing_angle(face.centroid, face.normal, pose.position)


def viewing_angles_many(centroids, normals, position) -> tuple[np.ndarray, np.ndarray]:
    """Distances and viewing angles from ``position`` to many faces."""
    v = np.asarray(position, dtype=float) - centroids
    d = np.linalg.norm(v, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.einsum("ij,ij->i", v, normals) / d
    ang = np.arccos(np.clip(c, -1.0, 1.0))
    ang[d < EPS_GEO] = np.nan
    return d, ang


@dataclass(frozen=True)
class OrientedBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray  # columns are the box axes in world coordinates

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-8) or np.linalg.det(r) < 0:
            raise GeometryError("rotation must be proper orthonormal")
        if np.any(np.asarray(self.half_extents) <= 0):
            raise GeometryError("half extents must be positive")

    def to_local(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.center) @ self.rotation

    def to_world(self, local) -> np.ndarray:
        return np.atleast_2d(local) @ self.rotation.T + self.center

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        return np.all(np.abs(self.to_local(points)) <= self.half_extents + tol, axis=1)

    def inflated(self, margin: float) -> "OrientedBox":
        return OrientedBox(self.center, self.half_extents + margin, self.rotation)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return self.to_world(signs * self.half_extents)


def _canonical_axes(vecs: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest component positive, right-handed."""
    out = vecs.copy()
    for i in range(2):
        col = out[:, i]
        if col[np.argmax(np.abs(col))] < 0:
            out[:, i] = -col
    out[:, 2] = np.cross(out[:, 0], out[:, 1])
    return out


def _refine_in_plane(pts: np.ndarray, axes: np.ndarray, i: int, j: int) -> np.ndarray:
    """Rotate axes i, j inside their plane to minimise the projected area."""
    a, b = axes[:, i].copy(), axes[:, j].copy()
    pa, pb = pts @ a, pts @ b

    def area(theta):
        c, s = math.cos(theta), math.sin(theta)
        u = c * pa + s * pb
        v = -s * pa + c * pb
        return np.ptp(u) * np.ptp(v)

    grid = np.linspace(0.0, math.pi / 2, 181, endpoint=False)
    vals = [area(t) for t in grid]
    k = int(np.argmin(vals))
    step = grid[1] - grid[0]
    res = minimize_scalar(area, bounds=(grid[k] - step, grid[k] + step), method="bounded",
                          options={"xatol": 1e-10})
    theta = res.x if res.fun <= vals[k] else grid[k]
    c, s = math.cos(theta), math.sin(theta)
    out = axes.copy()
    out[:, i] = c * a + s * b
    out[:, j] = -s * a + c * b
    return out


def fit_oriented_box(points, margin: float = 0.0, degenerate_tol: float = 1e-6) -> OrientedBox:
    """PCA-oriented bounding box of a point cloud, inflated by ``margin``.

    Principal axes are ill-defined when eigenvalues coincide (a cube has an
    isotropic covariance); inside such an eigenspace the axes are rotated to
    minimise the enclosed area, with world z taken as fixed when all three
    eigenvalues coincide.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise GeometryError("need at least 3 points for an oriented box")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / len(pts)
    w, v = np.linalg.eigh(cov)
    w, v = w[::-1], v[:, ::-1]
    scale = max(w[0], EPS_GEO)
    if w[1] / scale < 1e-12:
        raise GeometryError("point cloud is collinear")
    close01 = abs(w[0] - w[1]) <= degenerate_tol * scale
    close12 = abs(w[1] - w[2]) <= degenerate_tol * scale
    axes = _canonical_axes(v)
    if close01 and close12:
        axes = np.eye(3)
        axes = _refine_in_plane(centered, axes, 0, 1)
    elif close01:
        axes = _refine_in_plane(centered, axes, 0, 1)
    elif close12:
        axes = _refine_in_plane(centered, axes, 1, 2)
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    local = centered @ axes
    lo, hi = local.min(axis=0), local.max(axis=0)
    center = mean + axes @ ((lo + hi) / 2.0)
    half = np.maximum((hi - lo) / 2.0 + margin, EPS_GEO)
    return OrientedBox(center, half, axes)


def sample_spherical(center, r_max: float, rng: np.random.Generator) -> Configuration:
    """Uniform sample in a ball; the returned yaw faces the ball center.

    Consumes exactly three uniforms per call.
    """
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    u = rng.random(3)
    r = r_max * u[0] ** (1.0 / 3.0)
    cos_t = 1.0 - 2.0 * u[1]
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * u[2]
    c = np.asarray(center, dtype=float)
    p = c + r * np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t])
    return Configuration.at(p, yaw_towards(p, c))


def sample_spherical_many(center, r_max: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform ball samples as an (n, 3) array.

    Draws the same uniforms, in the same order, as ``n`` calls to
    :func:`sample_spherical`.
    """
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    u = rng.random((n, 3))
    r = r_max * np.cbrt(u[:, 0])
    cos_t = 1.0 - 2.0 * u[:, 1]
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * u[:, 2]
    dirs = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
    return np.asarray(center, dtype=float) + r[:, None] * dirs
