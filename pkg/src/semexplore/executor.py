"""Kinematic path execution producing time-stamped sensor events."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .geometry import Configuration, FrustumModel
from .kinematics import Kinematics, interpolate
from .world import CameraObservation, DepthScan, World, render_camera_observation, render_depth


class EmptyPathError(ValueError):
    pass


@dataclass
class SensorEvent:
    time: float
    pose: Configuration
    depth: DepthScan | None = None
    camera: CameraObservation | None = None


@dataclass
class SensorRig:
    depth: FrustumModel
    camera: FrustumModel
    depth_resolution_deg: float = 1.0
    camera_occlusion_tol: float = 0.3

    def sense(self, world: World, pose: Configuration, meshes: Mapping[int, object], t: float) -> SensorEvent:
        return SensorEvent(
            t, pose,
            render_depth(world, pose, self.depth, self.depth_resolution_deg),
            render_camera_observation(world, meshes, pose, self.camera, self.camera_occlusion_tol),
        )


@dataclass
class Execution:
    events: list[SensorEvent]
    elapsed: float
    final_pose: Configuration
    executed: list[Configuration] = field(default_factory=list)
    truncated: bool = False


def schedule(path: Sequence[Configuration], kin: Kinematics, period: float,
             time_limit: float | None = None, include_start: bool = True,
             sense_at_waypoints: bool = True):
    """Event offsets (relative to path start) and poses along a piecewise-linear path.

    Returns (offsets, poses, elapsed, executed_waypoints, truncated).
    """
    if not path:
        raise EmptyPathError("cannot execute an empty path")
    if period <= 0:
        raise ValueError("sensor period must be positive")
    seg = np.array([kin.segment_time(a, b) for a, b in zip(path, path[1:])])
    arrive = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(arrive[-1])
    limit = total if time_limit is None else max(0.0, min(total, time_limit))
    truncated = limit < total - 1e-12

    def pose_at(t: float) -> Configuration:
        k = int(np.searchsorted(arrive, t, side="right")) - 1
        if k >= len(seg):
            return path[-1]
        frac = (t - arrive[k]) / seg[k] if seg[k] > 0 else 1.0
        return interpolate(path[k], path[k + 1], frac)

    times = list(np.arange(0, int(np.floor(limit / period + 1e-9)) + 1) * period)
    if sense_at_waypoints:
        times.extend(float(a) for a in arrive if a <= limit + 1e-12)
    times.append(limit)
    times = sorted(times)
    offsets = []
    for t in times:
        if offsets and t - offsets[-1] < 1e-9:
            continue
        offsets.append(float(t))
    if not include_start:
        offsets = [t for t in offsets if t > 1e-9]
    poses = []
    for t in offsets:
        # exact waypoint poses where the offset coincides with an arrival
        k = int(np.argmin(np.abs(arrive - t)))
        poses.append(path[k] if abs(arrive[k] - t) < 1e-9 else pose_at(t))
    reached = [p for p, a in zip(path, arrive) if a <= limit + 1e-12]
    final = path[-1] if not truncated else pose_at(limit)
    executed = reached + ([final] if truncated else [])
    return offsets, poses, limit, executed, truncated


def execute_path(world: World, rig: SensorRig, path: Sequence[Configuration], kin: Kinematics,
                 period: float, start_time: float = 0.0,
                 meshes: Callable[[], Mapping[int, object]] | None = None,
                 on_event: Callable[[SensorEvent], None] | None = None,
                 time_limit: float | None = None, include_start: bool = True,
                 collect: bool = True) -> Execution:
    """Move along ``path`` and sense at a fixed period and at every waypoint.

    ``on_event`` runs before the next event is rendered, so map and mesh
    updates from one event are visible to the next camera render.
    """
    offsets, poses, elapsed, executed, truncated = schedule(
        path, kin, period, time_limit, include_start)
    events = []
    for dt, pose in zip(offsets, poses):
        ev = rig.sense(world, pose, meshes() if meshes else {}, start_time + dt)
        if on_event is not None:
            on_event(ev)
        if collect:
            events.append(ev)
        else:
            events.append(SensorEvent(ev.time, ev.pose))
    return Execution(events, elapsed, executed[-1], executed, truncated)
