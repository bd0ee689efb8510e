"""Scenario files: YAML parsed into validated settings with line-accurate diagnostics."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .geometry import Configuration, FrustumModel
from .kinematics import Kinematics
from .voxels import RobotBody
from .world import World


class ScenarioError(ValueError):
    """Invalid scenario; the message carries ``file:line:`` diagnostics."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BoxSpec(_Strict):
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("box hi must exceed lo on every axis")
        return self


class WorldSpec(_Strict):
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]]
    enclose: bool = True
    boxes: list[BoxSpec] = []


class RobotSpec(_Strict):
    size: tuple[float, float, float] = (0.38, 0.38, 0.24)
    speed: float = Field(1.0, gt=0)
    yaw_rate: float = Field(0.5, gt=0)


class FrustumSpec(_Strict):
    h_fov: float = Field(gt=0, le=360)
    v_fov: float = Field(gt=0, lt=180)
    d_max: float = Field(gt=0)
    width: Optional[int] = Field(None, gt=0)
    height: Optional[int] = Field(None, gt=0)

    def model(self) -> FrustumModel:
        return FrustumModel(self.h_fov, self.v_fov, self.d_max, self.width, self.height)


class SensorSpec(_Strict):
    depth: FrustumSpec = FrustumSpec(h_fov=360, v_fov=90, d_max=50)
    camera: FrustumSpec = FrustumSpec(h_fov=120, v_fov=120, d_max=7, width=3200, height=3200)
    period: float = Field(1.0, gt=0)
    depth_resolution_deg: float = Field(1.5, gt=0)
    camera_ray_resolution_deg: float = Field(2.0, gt=0)
    camera_occlusion_tol: float = Field(0.3, ge=0)


class SemanticSpec(_Strict):
    mesh_cell: float = Field(0.1, gt=0)
    normal_radius_cells: float = Field(2.5, gt=0)
    min_points: int = Field(4, ge=1)


class ExplorationSpec(_Strict):
    stint_time: float = Field(20.0, gt=0)
    local_half_extent: tuple[float, float, float] = (4.0, 4.0, 2.0)
    n_samples: int = Field(80, ge=1)
    connect_radius: float = Field(3.0, gt=0)
    max_neighbors: int = Field(6, ge=1)
    gain_range: float = Field(4.0, gt=0)
    gain_v_fov: float = Field(80.0, gt=0, lt=180)
    discount: float = Field(0.25, ge=0)
    min_gain: float = Field(20.0, ge=0)
    surface_yaw_candidates: int = Field(8, ge=1)
    global_rho: float = Field(1.0, gt=0)
    global_connect_radius: float = Field(3.0, gt=0)


class HoleSpec(_Strict):
    samples_per_edge: int = Field(64, ge=1)
    d_v_max: float = Field(4.0, gt=0)
    theta_v_max_deg: float = Field(75.0, ge=0, le=180)
    perimeter_factor: float = Field(3.0, ge=0)
    time_budget: float = Field(120.0, ge=0)
    connect_radius: float = Field(2.5, gt=0)
    max_neighbors: int = Field(5, ge=1)
    graph_samples: int = Field(150, ge=0)
    occlusion_tail_voxels: float = Field(2.0 * math.sqrt(3.0), ge=0)


class InspectionSpec(_Strict):
    r_min: float = Field(21.0, gt=0)
    theta_max_deg: float = Field(45.0, gt=0, le=90)
    k: int = Field(10, ge=1)
    eta: float = Field(0.2, gt=0, le=1)
    n_samples: int = Field(400, ge=1)
    connect_radius: float = Field(1.5, gt=0)
    max_neighbors: int = Field(8, ge=1)
    min_new_points: int = Field(20, ge=0)
    min_uninspected_fraction: float = Field(0.01, ge=0, le=1)


class MissionSpec(_Strict):
    budget: float = Field(900.0, ge=0)
    wall_clock_cap: Optional[float] = Field(None, gt=0)


class Scenario(_Strict):
    name: str
    seed: int = 0
    world: WorldSpec
    start: tuple[float, float, float, float]
    resolution: float = Field(0.2, gt=0)
    robot: RobotSpec = RobotSpec()
    sensors: SensorSpec = SensorSpec()
    semantic: SemanticSpec = SemanticSpec()
    exploration: ExplorationSpec = ExplorationSpec()
    holes: HoleSpec = HoleSpec()
    inspection: InspectionSpec = InspectionSpec()
    mission: MissionSpec = MissionSpec()

    @field_validator("start")
    @classmethod
    def _finite(cls, v):
        if not all(math.isfinite(x) for x in v):
            raise ValueError("start must be finite")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        lo, hi = self.world.bounds
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("world bounds hi must exceed lo")
        if not all(l < s < h for l, s, h in zip(lo, self.start[:3], hi)):
            raise ValueError("start lies outside the world bounds")
        for b in self.world.boxes:
            if any(bl < l or bh > h for l, h, bl, bh in zip(lo, hi, b.lo, b.hi)):
                raise ValueError("every box must lie inside the world bounds")
        labels = sorted({b.label for b in self.world.boxes if b.label > 0})
        if labels != list(range(1, len(labels) + 1)):
            raise ValueError("semantic labels must be contiguous from 1")
        if self.sensors.camera.width is None or self.sensors.camera.height is None:
            raise ValueError("camera needs width and height in pixels")
        return self

    # --- derived objects ---------------------------------------------------

    def build_world(self) -> World:
        lo, hi = self.world.bounds
        return World.from_boxes(lo, hi, [(b.lo, b.hi, b.label) for b in self.world.boxes], self.world.enclose)

    def start_configuration(self) -> Configuration:
        return Configuration(*self.start)

    def body(self) -> RobotBody:
        return RobotBody(self.robot.size)

    def kinematics(self) -> Kinematics:
        return Kinematics(self.robot.speed, self.robot.yaw_rate)


def _node_at(node, loc):
    """Deepest YAML node along a pydantic error location."""
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
    return node


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ScenarioError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}:1: scenario must be a mapping")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            node = _node_at(root, err["loc"])
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{source}:{node.start_mark.line + 1}: {where}: {err['msg']}")
        raise ScenarioError("\n".join(lines)) from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"{p}:0: cannot read scenario: {exc.strerror}") from None
    return parse_scenario(text, str(p))


def bundled_scenario(name: str) -> Path:
    p = Path(__file__).parent / "scenarios" / f"{name}.yaml"
    if not p.exists():
        raise ScenarioError(f"{p}:0: no bundled scenario named {name!r}")
    return p
