"""Occupancy grid with ray integration, collision queries and exploration gains."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .geometry import Configuration, FrustumModel

UNKNOWN, FREE, OCCUPIED = 0, 1, 2

SNAPSHOT_MAGIC = b"OGRD"
SNAPSHOT_VERSION = 1
# magic, version, origin xyz, resolution, dims xyz
_HEADER = struct.Struct("<4sI3dd3I")


@dataclass(frozen=True)
class RobotBody:
    size: tuple[float, float, float] = (0.38, 0.38, 0.24)

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError("body dimensions must be positive")

    @property
    def half(self) -> np.ndarray:
        return np.asarray(self.size, dtype=float) / 2.0


@dataclass
class OccupancyGrid:
    origin: np.ndarray
    resolution: float
    dims: tuple[int, int, int]
    state: np.ndarray = field(default=None, repr=False)
    camera_seen: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.dims = tuple(int(d) for d in self.dims)
        if self.resolution <= 0 or min(self.dims) <= 0:
            raise ValueError("grid needs positive resolution and dimensions")
        if self.state is None:
            self.state = np.zeros(self.dims, np.uint8)
        if self.camera_seen is None:
            self.camera_seen = np.zeros(self.dims, np.bool_)

    @classmethod
    def from_bounds(cls, lo, hi, resolution: float) -> "OccupancyGrid":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        dims = np.maximum(1, np.ceil((hi - lo) / resolution - 1e-9).astype(int))
        return cls(lo, resolution, tuple(dims))

    @property
    def dims_array(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=np.int64)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * self.dims_array

    @property
    def voxel_volume(self) -> float:
        return self.resolution ** 3

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.origin.copy(), self.resolution, self.dims,
                             self.state.copy(), self.camera_seen.copy())

    def index_of(self, p) -> tuple[int, int, int]:
        u = (np.asarray(p, dtype=float) - self.origin) / self.resolution
        return tuple(int(math.floor(v)) for v in u)

    def center_of(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def centers(self, indices: np.ndarray) -> np.ndarray:
        return self.origin + (indices + 0.5) * self.resolution

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p < self.upper))

    def count(self, value: int) -> int:
        return int(np.count_nonzero(self.state == value))

    def known_volume(self) -> float:
        return (self.state.size - self.count(UNKNOWN)) * self.voxel_volume

    def set_box(self, lo, hi, value: int) -> None:
        """Set every voxel overlapping the open box (lo, hi) to ``value``."""
        ilo = np.floor((np.asarray(lo) - self.origin) / self.resolution).astype(int)
        ihi = np.ceil((np.asarray(hi) - self.origin) / self.resolution).astype(int) - 1
        ilo = np.clip(ilo, 0, np.asarray(self.dims) - 1)
        ihi = np.clip(ihi, 0, np.asarray(self.dims) - 1)
        self.state[ilo[0]:ihi[0] + 1, ilo[1]:ihi[1] + 1, ilo[2]:ihi[2] + 1] = value

    # --- sensor updates -------------------------------------------------

    def integrate_depth_scan(self, sensor_position, endpoints, is_surface) -> None:
        """Carve free space along each ray and mark surface endpoints occupied.

        Endpoints outside the grid are clipped to its bounds; a clipped ray
        only carves free space.
        """
        o = np.asarray(sensor_position, dtype=float)
        ends = np.ascontiguousarray(np.atleast_2d(endpoints), dtype=float)
        if len(ends) == 0:
            return
        surf = np.ascontiguousarray(is_surface, dtype=np.bool_)
        K.integrate_rays(self.state, self.origin, float(self.resolution), self.dims_array, o, ends, surf)

    def clear_body(self, pose: Configuration, body: RobotBody) -> None:
        """The robot occupies its own footprint, so those voxels are free."""
        p = pose.position
        self.set_box(p - body.half, p + body.half, FREE)

    def mark_camera_rays(self, pose: Configuration, frustum: FrustumModel, resolution_deg: float = 1.0) -> None:
        dirs = frustum_directions(pose, frustum, resolution_deg)
        K.mark_seen_rays(self.state, self.camera_seen, self.origin, float(self.resolution),
                         self.dims_array, pose.position, dirs, float(frustum.d_max))

    # --- queries --------------------------------------------------------

    def is_path_collision_free(self, a: Configuration, b: Configuration, body: RobotBody) -> bool:
        """Swept body check along a->b; Unknown and out-of-grid count as blocked."""
        return bool(K.path_free(self.state, self.origin, float(self.resolution), self.dims_array,
                                a.position, b.position, body.half, self.resolution / 2.0))

    def is_pose_free(self, pose: Configuration, body: RobotBody) -> bool:
        return self.is_path_collision_free(pose, pose, body)

    def paths_free(self, starts: np.ndarray, ends: np.ndarray, body: RobotBody) -> np.ndarray:
        return K.paths_free(self.state, self.origin, float(self.resolution), self.dims_array,
                            np.ascontiguousarray(starts, float), np.ascontiguousarray(ends, float),
                            body.half, self.resolution / 2.0)

    def segments_occluded(self, origin, targets, ignore_tail: float = 0.0) -> np.ndarray:
        return K.segments_occluded(self.state, self.origin, float(self.resolution), self.dims_array,
                                   np.asarray(origin, float), np.ascontiguousarray(targets, float),
                                   float(ignore_tail))

    def _gain(self, pose: Configuration, frustum: FrustumModel, surface: bool) -> int:
        rot = np.ascontiguousarray(frustum.sensor_to_world(pose))
        return int(K.gain_count(self.state, self.camera_seen, self.origin, float(self.resolution),
                                self.dims_array, pose.position, rot, frustum.h_fov / 2.0,
                                frustum.v_fov / 2.0, float(frustum.d_max), frustum.omnidirectional,
                                surface))

    def volumetric_gain(self, pose: Configuration, frustum: FrustumModel) -> int:
        """Unknown voxels with centers inside the frustum and no occupied voxel in between."""
        return self._gain(pose, frustum, False)

    def surface_gain(self, pose: Configuration, frustum: FrustumModel) -> int:
        """Visible unseen surface voxels.

        A voxel qualifies if it is Unknown, or Occupied and not yet seen by the
        camera, and has a 6-connected Free neighbour.
        """
        return self._gain(pose, frustum, True)

    # --- snapshot -------------------------------------------------------

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, *self.origin.tolist(),
                            float(self.resolution), *self.dims)
        return head + self.state.astype(np.uint8).tobytes(order="C") + \
            self.camera_seen.astype(np.uint8).tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "OccupancyGrid":
        magic, version, ox, oy, oz, res, nx, ny, nz = _HEADER.unpack_from(data, 0)
        if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
            raise ValueError("not an occupancy grid snapshot")
        n = nx * ny * nz
        off = _HEADER.size
        if len(data) != off + 2 * n:
            raise ValueError("truncated occupancy grid snapshot")
        state = np.frombuffer(data, np.uint8, n, off).reshape(nx, ny, nz).copy()
        seen = np.frombuffer(data, np.uint8, n, off + n).reshape(nx, ny, nz).astype(bool)
        return cls(np.array([ox, oy, oz]), res, (nx, ny, nz), state, seen)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        return cls.from_bytes(Path(path).read_bytes())


def frustum_directions(pose: Configuration, frustum: FrustumModel, resolution_deg: float) -> np.ndarray:
    """Unit ray directions (world frame) on a regular angular grid over the frustum."""
    n_az = max(1, int(round(frustum.h_fov / resolution_deg)))
    n_el = max(1, int(round(frustum.v_fov / resolution_deg)))
    az_step = frustum.h_fov / n_az
    el_step = frustum.v_fov / n_el
    az = np.radians(-frustum.h_fov / 2.0 + az_step * (np.arange(n_az) + 0.5))
    el = np.radians(-frustum.v_fov / 2.0 + el_step * (np.arange(n_el) + 0.5))
    A, E = np.meshgrid(az, el, indexing="ij")
    local = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    return np.ascontiguousarray(local @ frustum.sensor_to_world(pose).T)
