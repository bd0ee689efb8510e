"""Shared path execution-time model used by the executor and every planner."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .geometry import Configuration, wrap_angle


@dataclass(frozen=True)
class Kinematics:
    speed: float = 1.0  # m/s
    yaw_rate: float = 0.5  # rad/s

    def __post_init__(self):
        if self.speed <= 0 or self.yaw_rate <= 0:
            raise ValueError("speed and yaw rate must be positive")

    def segment_time(self, a: Configuration, b: Configuration) -> float:
        return max(a.distance(b) / self.speed, abs(wrap_angle(b.yaw - a.yaw)) / self.yaw_rate)

    def path_time(self, path: Sequence[Configuration]) -> float:
        return sum(self.segment_time(a, b) for a, b in zip(path, path[1:]))


def path_length(path: Sequence[Configuration]) -> float:
    return sum(a.distance(b) for a, b in zip(path, path[1:]))


def interpolate(a: Configuration, b: Configuration, frac: float) -> Configuration:
    frac = min(max(frac, 0.0), 1.0)
    dyaw = wrap_angle(b.yaw - a.yaw)
    return Configuration(
        a.x + (b.x - a.x) * frac,
        a.y + (b.y - a.y) * frac,
        a.z + (b.z - a.z) * frac,
        a.yaw + dyaw * frac,
    )


def densify(path: Sequence[Configuration], spacing: float) -> list[Configuration]:
    """Insert intermediate poses so consecutive poses are at most ``spacing`` apart."""
    if not path:
        return []
    out = [path[0]]
    for a, b in zip(path, path[1:]):
        n = max(1, math.ceil(a.distance(b) / spacing - 1e-9))
        out.extend(interpolate(a, b, i / n) for i in range(1, n + 1))
    return out
