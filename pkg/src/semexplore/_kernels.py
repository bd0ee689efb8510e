"""Numba kernels for voxel traversal and ray/triangle queries.

All kernels are serial so results do not depend on the thread count.
Voxel coordinates: u = (p - grid_origin) / resolution, voxel index = floor(u).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

UNKNOWN = np.uint8(0)
FREE = np.uint8(1)
OCCUPIED = np.uint8(2)

_INF = np.inf


@njit(cache=True)
def _clip_segment(u0, u1, dims):
    """Parametric [t_in, t_out] of segment u0->u1 inside the box [0, dims]."""
    t_in = 0.0
    t_out = 1.0
    for a in range(3):
        d = u1[a] - u0[a]
        if abs(d) < 1e-15:
            if u0[a] < 0.0 or u0[a] > dims[a]:
                return 1.0, 0.0
        else:
            ta = (0.0 - u0[a]) / d
            tb = (dims[a] - u0[a]) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_in:
                t_in = ta
            if tb < t_out:
                t_out = tb
    return t_in, t_out


@njit(cache=True)
def _in_bounds(ix, iy, iz, dims):
    return 0 <= ix < dims[0] and 0 <= iy < dims[1] and 0 <= iz < dims[2]


@njit(cache=True)
def _dda_setup(u0, u1):
    step = np.zeros(3, np.int64)
    tmax = np.empty(3)
    tdelta = np.empty(3)
    for a in range(3):
        d = u1[a] - u0[a]
        c = math.floor(u0[a])
        if d > 0:
            step[a] = 1
            tmax[a] = (c + 1.0 - u0[a]) / d
            tdelta[a] = 1.0 / d
        elif d < 0:
            step[a] = -1
            tmax[a] = (u0[a] - c) / (-d)
            tdelta[a] = 1.0 / (-d)
        else:
            tmax[a] = _INF
            tdelta[a] = _INF
    return step, tmax, tdelta


@njit(cache=True)
def integrate_rays(state, grid_origin, res, dims, origin, endpoints, is_surface):
    """Free-space carving followed by endpoint occupancy for one scan.

    Traversed voxels (excluding the endpoint voxel) become FREE; endpoint
    voxels of surface returns become OCCUPIED afterwards, so within one scan
    occupied wins. Surface endpoints are nudged a thousandth of a voxel along
    the ray first. Rays leaving the grid carve every voxel they cross inside it.
    """
    n = endpoints.shape[0]
    u0 = (origin - grid_origin) / res
    end_idx = np.full((n, 3), -1, np.int64)
    for r in range(n):
        u1 = (endpoints[r] - grid_origin) / res
        surf = is_surface[r]
        t_in, t_out = _clip_segment(u0, u1, dims)
        if t_in > t_out:
            continue
        clipped = t_out < 1.0
        if clipped:
            # clipped at the grid boundary: carve only, including the last voxel
            surf = False
            u1 = u0 + (u1 - u0) * (t_out - 1e-9)
        elif surf:
            # push the hit just past the surface so a face lying on a voxel
            # boundary marks the voxel on the solid side, not the free one
            d = u1 - u0
            dn = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            if dn > 0.0:
                u1 = u1 + d * (1e-3 / dn)
        ex = int(math.floor(u1[0]))
        ey = int(math.floor(u1[1]))
        ez = int(math.floor(u1[2]))
        ix = int(math.floor(u0[0]))
        iy = int(math.floor(u0[1]))
        iz = int(math.floor(u0[2]))
        step, tmax, tdelta = _dda_setup(u0, u1)
        nsteps = abs(ex - ix) + abs(ey - iy) + abs(ez - iz)
        for _ in range(nsteps):
            if _in_bounds(ix, iy, iz, dims):
                state[ix, iy, iz] = FREE
            if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
                ix += step[0]
                tmax[0] += tdelta[0]
            elif tmax[1] <= tmax[2]:
                iy += step[1]
                tmax[1] += tdelta[1]
            else:
                iz += step[2]
                tmax[2] += tdelta[2]
        if surf:
            end_idx[r, 0] = ex
            end_idx[r, 1] = ey
            end_idx[r, 2] = ez
        elif clipped and _in_bounds(ex, ey, ez, dims):
            state[ex, ey, ez] = FREE
    for r in range(n):
        ex, ey, ez = end_idx[r, 0], end_idx[r, 1], end_idx[r, 2]
        if ex >= 0 and _in_bounds(ex, ey, ez, dims):
            state[ex, ey, ez] = OCCUPIED


@njit(cache=True)
def segment_occluded(state, grid_origin, res, dims, p0, p1, ignore_tail):
    """True when an OCCUPIED voxel other than the target voxel lies on p0->p1.

    Voxels entered at a distance greater than ``|p1 - p0| - ignore_tail`` from
    p0 are not tested. Out-of-bounds voxels never occlude.
    """
    u0 = (p0 - grid_origin) / res
    u1 = (p1 - grid_origin) / res
    length = math.sqrt(((p1 - p0) ** 2).sum())
    t_stop = 1.0 - ignore_tail / length if length > 0 else 0.0
    ex = int(math.floor(u1[0]))
    ey = int(math.floor(u1[1]))
    ez = int(math.floor(u1[2]))
    ix = int(math.floor(u0[0]))
    iy = int(math.floor(u0[1]))
    iz = int(math.floor(u0[2]))
    step, tmax, tdelta = _dda_setup(u0, u1)
    nsteps = abs(ex - ix) + abs(ey - iy) + abs(ez - iz)
    t_enter = 0.0
    for _ in range(nsteps):
        if t_enter > t_stop:
            return False
        if _in_bounds(ix, iy, iz, dims) and state[ix, iy, iz] == OCCUPIED:
            return True
        if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
            t_enter = tmax[0]
            ix += step[0]
            tmax[0] += tdelta[0]
        elif tmax[1] <= tmax[2]:
            t_enter = tmax[1]
            iy += step[1]
            tmax[1] += tdelta[1]
        else:
            t_enter = tmax[2]
            iz += step[2]
            tmax[2] += tdelta[2]
    return False


@njit(cache=True)
def _in_frustum(rel, rot, hfov_half, vfov_half, dmax, omni):
    # rel in world frame; rot columns = sensor axes in world
    x = rel[0] * rot[0, 0] + rel[1] * rot[1, 0] + rel[2] * rot[2, 0]
    y = rel[0] * rot[0, 1] + rel[1] * rot[1, 1] + rel[2] * rot[2, 1]
    z = rel[0] * rot[0, 2] + rel[1] * rot[1, 2] + rel[2] * rot[2, 2]
    dist = math.sqrt(x * x + y * y + z * z)
    if dist > dmax:
        return False
    el = math.degrees(math.atan2(z, math.hypot(x, y)))
    if not abs(el) < vfov_half:
        return False
    if not omni:
        az = math.degrees(math.atan2(y, x))
        if not abs(az) < hfov_half:
            return False
    return True


@njit(cache=True)
def _has_free_neighbor(state, ix, iy, iz, dims):
    if ix > 0 and state[ix - 1, iy, iz] == FREE:
        return True
    if ix + 1 < dims[0] and state[ix + 1, iy, iz] == FREE:
        return True
    if iy > 0 and state[ix, iy - 1, iz] == FREE:
        return True
    if iy + 1 < dims[1] and state[ix, iy + 1, iz] == FREE:
        return True
    if iz > 0 and state[ix, iy, iz - 1] == FREE:
        return True
    if iz + 1 < dims[2] and state[ix, iy, iz + 1] == FREE:
        return True
    return False


@njit(cache=True)
def gain_count(state, seen, grid_origin, res, dims, pos, rot, hfov_half, vfov_half, dmax, omni, surface_mode):
    """Count visible unknown voxels (volumetric) or unseen surface voxels (surface)."""
    lo = np.empty(3, np.int64)
    hi = np.empty(3, np.int64)
    for a in range(3):
        lo[a] = max(0, int(math.floor((pos[a] - dmax - grid_origin[a]) / res)))
        hi[a] = min(dims[a] - 1, int(math.floor((pos[a] + dmax - grid_origin[a]) / res)))
    count = 0
    c = np.empty(3)
    rel = np.empty(3)
    for ix in range(lo[0], hi[0] + 1):
        for iy in range(lo[1], hi[1] + 1):
            for iz in range(lo[2], hi[2] + 1):
                s = state[ix, iy, iz]
                if surface_mode:
                    if s == FREE:
                        continue
                    if s == OCCUPIED and seen[ix, iy, iz]:
                        continue
                    if not _has_free_neighbor(state, ix, iy, iz, dims):
                        continue
                elif s != UNKNOWN:
                    continue
                c[0] = grid_origin[0] + (ix + 0.5) * res
                c[1] = grid_origin[1] + (iy + 0.5) * res
                c[2] = grid_origin[2] + (iz + 0.5) * res
                rel[0] = c[0] - pos[0]
                rel[1] = c[1] - pos[1]
                rel[2] = c[2] - pos[2]
                if not _in_frustum(rel, rot, hfov_half, vfov_half, dmax, omni):
                    continue
                if segment_occluded(state, grid_origin, res, dims, pos, c, 0.0):
                    continue
                count += 1
    return count


@njit(cache=True)
def mark_seen_rays(state, seen, grid_origin, res, dims, origin, dirs, max_range):
    """Walk camera rays; flag known voxels up to and including the first OCCUPIED voxel.

    A ray stops at the first UNKNOWN voxel (nothing mapped beyond it).
    """
    u0 = (origin - grid_origin) / res
    for r in range(dirs.shape[0]):
        u1 = u0 + dirs[r] * (max_range / res)
        t_in, t_out = _clip_segment(u0, u1, dims)
        if t_in > t_out:
            continue
        u1 = u0 + (u1 - u0) * min(1.0, t_out - 1e-9)
        ex = int(math.floor(u1[0]))
        ey = int(math.floor(u1[1]))
        ez = int(math.floor(u1[2]))
        ix = int(math.floor(u0[0]))
        iy = int(math.floor(u0[1]))
        iz = int(math.floor(u0[2]))
        step, tmax, tdelta = _dda_setup(u0, u1)
        nsteps = abs(ex - ix) + abs(ey - iy) + abs(ez - iz)
        for _ in range(nsteps + 1):
            if not _in_bounds(ix, iy, iz, dims):
                break
            s = state[ix, iy, iz]
            if s == UNKNOWN:
                break
            seen[ix, iy, iz] = True
            if s == OCCUPIED:
                break
            if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
                ix += step[0]
                tmax[0] += tdelta[0]
            elif tmax[1] <= tmax[2]:
                iy += step[1]
                tmax[1] += tdelta[1]
            else:
                iz += step[2]
                tmax[2] += tdelta[2]


@njit(cache=True)
def box_free(state, dims, lo, hi):
    """True when every voxel index in [lo, hi] is inside the grid and FREE."""
    for a in range(3):
        if lo[a] < 0 or hi[a] >= dims[a]:
            return False
    for ix in range(lo[0], hi[0] + 1):
        for iy in range(lo[1], hi[1] + 1):
            for iz in range(lo[2], hi[2] + 1):
                if state[ix, iy, iz] != FREE:
                    return False
    return True


@njit(cache=True)
def _box_index_range(pmin, pmax, grid_origin, res, lo, hi):
    for a in range(3):
        lo[a] = int(math.floor((pmin[a] - grid_origin[a]) / res))
        hi[a] = int(math.ceil((pmax[a] - grid_origin[a]) / res)) - 1


@njit(cache=True)
def path_free(state, grid_origin, res, dims, a, b, half, step):
    """Swept axis-aligned body along a->b, checked per sub-segment bounding box."""
    d = b - a
    length = math.sqrt((d * d).sum())
    n = max(1, int(math.ceil(length / step))) if length > 0 else 1
    lo = np.empty(3, np.int64)
    hi = np.empty(3, np.int64)
    pmin = np.empty(3)
    pmax = np.empty(3)
    for i in range(n):
        p = a + d * (i / n)
        q = a + d * ((i + 1) / n)
        for k in range(3):
            pmin[k] = min(p[k], q[k]) - half[k]
            pmax[k] = max(p[k], q[k]) + half[k]
        _box_index_range(pmin, pmax, grid_origin, res, lo, hi)
        if not box_free(state, dims, lo, hi):
            return False
    return True


@njit(cache=True)
def paths_free(state, grid_origin, res, dims, starts, ends, half, step):
    out = np.empty(starts.shape[0], np.bool_)
    for i in range(starts.shape[0]):
        out[i] = path_free(state, grid_origin, res, dims, starts[i], ends[i], half, step)
    return out


@njit(cache=True)
def segments_occluded(state, grid_origin, res, dims, p0, targets, ignore_tail):
    out = np.empty(targets.shape[0], np.bool_)
    for i in range(targets.shape[0]):
        out[i] = segment_occluded(state, grid_origin, res, dims, p0, targets[i], ignore_tail)
    return out


@njit(cache=True)
def _tri_frame(tris):
    """Per triangle: first vertex and both edge vectors, flattened to (n, 9)."""
    n = tris.shape[0]
    out = np.empty((n, 9))
    for k in range(n):
        for a in range(3):
            out[k, a] = tris[k, 0, a]
            out[k, 3 + a] = tris[k, 1, a] - tris[k, 0, a]
            out[k, 6 + a] = tris[k, 2, a] - tris[k, 0, a]
    return out


@njit(cache=True)
def _ray_tri(ox, oy, oz, dx, dy, dz, fr, k):
    """Moller-Trumbore, two-sided, against triangle ``k`` of a frame table. Returns t or inf."""
    e1x = fr[k, 3]
    e1y = fr[k, 4]
    e1z = fr[k, 5]
    e2x = fr[k, 6]
    e2y = fr[k, 7]
    e2z = fr[k, 8]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return _INF
    inv = 1.0 / det
    tx = ox - fr[k, 0]
    ty = oy - fr[k, 1]
    tz = oz - fr[k, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return _INF
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return _INF
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 1e-12:
        return _INF
    return t


@njit(cache=True)
def cast_rays(origin, dirs, tris, tmax):
    """Closest hit per ray: (t, triangle index) with t=inf, idx=-1 on a miss."""
    n = dirs.shape[0]
    fr = _tri_frame(tris)
    m = fr.shape[0]
    ts = np.full(n, _INF)
    idx = np.full(n, -1, np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for r in range(n):
        best = tmax
        bi = -1
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        for k in range(m):
            t = _ray_tri(ox, oy, oz, dx, dy, dz, fr, k)
            if t <= best:
                best = t
                bi = k
        if bi >= 0:
            ts[r] = best
            idx[r] = bi
    return ts, idx


@njit(cache=True)
def occluded_by_triangles(origin, targets, tris, tol):
    """True where a triangle is hit before ``|target - origin| - tol``."""
    n = targets.shape[0]
    fr = _tri_frame(tris)
    m = fr.shape[0]
    out = np.zeros(n, np.bool_)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for r in range(n):
        dx = targets[r, 0] - ox
        dy = targets[r, 1] - oy
        dz = targets[r, 2] - oz
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        if L <= tol:
            continue
        dx /= L
        dy /= L
        dz /= L
        lim = L - tol
        for k in range(m):
            t = _ray_tri(ox, oy, oz, dx, dy, dz, fr, k)
            if t < lim:
                out[r] = True
                break
    return out
