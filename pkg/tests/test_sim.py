import math

import numpy as np
import pytest

from semexplore.executor import EmptyPathError, SensorRig, execute_path, schedule
from semexplore.geometry import Configuration, FrustumModel, in_frustum_many
from semexplore.kinematics import Kinematics
from semexplore.mesh import TriangleMesh
from semexplore.scenario import bundled_scenario, load_scenario
from semexplore.voxels import frustum_directions
from semexplore.world import World, box_triangles, render_camera_observation, render_depth

import oracles

DEPTH = FrustumModel(360, 90, 50)


def test_box_triangles_face_outward():
    tris = box_triangles((0, 0, 0), (1, 2, 3))
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    outward = tris.mean(axis=1) - (0.5, 1.0, 1.5)
    assert np.all(np.einsum("ij,ij->i", n, outward) > 0)
    assert np.isclose(0.5 * np.linalg.norm(n, axis=1).sum(), 2 * (2 + 3 + 6))


def test_facing_labelled_wall_all_hits_carry_label():
    world = World.from_boxes((-5, -5, -5), (5, 5, 5), [((2, -4, -4), (2.5, 4, 4), 1)], enclose=False)
    scan = render_depth(world, Configuration(0, 0, 0), FrustumModel(60, 40, 7), 2.0)
    assert scan.hit.all()
    assert np.all(scan.labels == 1)
    assert np.allclose(scan.points[:, 0], 2.0)


def test_empty_world_returns_max_range():
    world = World.from_boxes((-5, -5, -5), (5, 5, 5), enclose=False)
    scan = render_depth(world, Configuration(0, 0, 0), DEPTH, 3.0)
    assert not scan.hit.any()
    assert np.all(scan.ranges == DEPTH.d_max)
    assert np.all(scan.labels == 0)


def test_two_box_labels_match_closest_triangle_oracle():
    sc = load_scenario(bundled_scenario("two_box"))
    world = sc.build_world()
    pose = Configuration(9.3, 6.2, 2.1, 0.7)
    scan = render_depth(world, pose, DEPTH, 3.0)
    for d, r, hit, lab in zip(scan.directions, scan.ranges, scan.hit, scan.labels):
        t = oracles.ray_triangles(pose.position, d, world.triangles)
        k = int(np.argmin(t))
        assert hit == bool(np.isfinite(t[k]) and t[k] <= DEPTH.d_max)
        if hit:
            assert r == pytest.approx(t[k], abs=1e-9)
            assert lab == world.labels[k]
    assert {1, 2} <= set(scan.labels.tolist())


def _sheet(nx=10, ny=5, x=4.0):
    """Planar mesh of 2*nx*ny triangles in the plane x = const, normals toward -x."""
    ys = np.linspace(-2.5, 2.5, nx + 1)
    zs = np.linspace(-1.25, 1.25, ny + 1)
    verts = np.array([[x, y, z] for y in ys for z in zs])
    faces = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b, c, d = a + ny + 1, a + 1, a + ny + 2
            faces += [[a, c, b], [c, d, b]]
    return TriangleMesh(verts, faces)


def test_face_straight_ahead_is_seen_head_on():
    mesh = TriangleMesh([[3, -0.1, -0.1], [3, 0.2, -0.1], [3, -0.1, 0.2]], [[0, 2, 1]])
    world = World.from_boxes((-5, -5, -5), (5, 5, 5), enclose=False)
    c = mesh.centroids[0]
    pose = Configuration(0, c[1], c[2])
    obs = render_camera_observation(world, {1: mesh}, pose, FrustumModel(90, 90, 7))
    assert len(obs) == 1
    (j, f, d, a), = obs.records()
    assert (j, f) == (1, 0)
    assert d == pytest.approx(3.0)
    assert a == pytest.approx(0.0, abs=1e-9)


def test_face_behind_occluder_is_absent():
    mesh = TriangleMesh([[3, -0.1, -0.1], [3, 0.2, -0.1], [3, -0.1, 0.2]], [[0, 2, 1]])
    world = World.from_boxes((-5, -5, -5), (5, 5, 5), [((1, -1, -1), (1.5, 1, 1), 0)], enclose=False)
    obs = render_camera_observation(world, {1: mesh}, Configuration(0, 0, 0), FrustumModel(90, 90, 7))
    assert len(obs) == 0


def test_camera_records_match_per_face_oracle():
    mesh = _sheet()
    assert mesh.n_faces == 100
    world = World.from_boxes((-6, -6, -6), (6, 6, 6), [((1.5, -0.5, -3), (2.0, 0.3, 0.2), 0)], enclose=False)
    pose = Configuration(0.2, -0.4, 0.1, 0.15)
    cam = FrustumModel(100, 60, 7)
    tol = 0.3
    obs = render_camera_observation(world, {3: mesh}, pose, cam, tol)
    got = {f: (d, a) for _, f, d, a in obs.records()}
    want = {}
    for f, (c, n) in enumerate(zip(mesh.centroids, mesh.normals)):
        if not oracles.in_frustum(pose.position, pose.yaw, cam.h_fov, cam.v_fov, cam.d_max, c):
            continue
        v = c - pose.position
        L = np.linalg.norm(v)
        if np.any(oracles.ray_triangles(pose.position, v / L, world.triangles) < L - tol):
            continue
        want[f] = oracles.face_angle(c, n, pose.position)
    assert 0 < len(want) < 100
    assert got.keys() == want.keys()
    for f in want:
        assert got[f] == pytest.approx(want[f])


def test_frustum_directions_stay_inside_frustum():
    pose = Configuration(1, 2, 3, 0.8)
    cam = FrustumModel(120, 90, 7)
    dirs = frustum_directions(pose, cam, 2.0)
    assert len(dirs) == 60 * 45
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert in_frustum_many(pose, cam, pose.position + dirs).all()


EMPTY = World.from_boxes((-20, -20, -20), (20, 20, 20), enclose=False)
RIG = SensorRig(FrustumModel(360, 90, 5), FrustumModel(90, 90, 5), depth_resolution_deg=10.0)
KIN = Kinematics(1.0, 0.5)


def test_straight_ten_meter_path():
    path = [Configuration(0, 0, 0), Configuration(10, 0, 0)]
    ex = execute_path(EMPTY, RIG, path, KIN, 1.0)
    assert len(ex.events) == 11
    assert ex.elapsed == pytest.approx(10.0)
    assert [e.time for e in ex.events] == pytest.approx(list(range(11)))
    assert ex.events[4].pose.x == pytest.approx(4.0)
    assert ex.final_pose == path[-1]


def test_pure_half_turn_takes_two_pi_seconds():
    path = [Configuration(0, 0, 0, 0.0), Configuration(0, 0, 0, math.pi)]
    ex = execute_path(EMPTY, RIG, path, KIN, 1.0)
    assert ex.elapsed == pytest.approx(2 * math.pi)
    assert ex.events[-1].pose.yaw == pytest.approx(math.pi)


def test_l_shaped_path_time_is_sum_of_segment_maxima():
    path = [Configuration(0, 0, 0, 0), Configuration(3, 0, 0, 0.2),
            Configuration(3, 0.5, 0, 2.0), Configuration(3, 4, 0, 1.5)]
    expected = sum(max(math.dist(a.position, b.position) / 1.0, abs(b.yaw - a.yaw) / 0.5)
                   for a, b in zip(path, path[1:]))
    ex = execute_path(EMPTY, RIG, path, KIN, 1.0, start_time=5.0)
    assert ex.elapsed == pytest.approx(expected)
    assert KIN.path_time(path) == pytest.approx(expected)
    times = [e.time for e in ex.events]
    assert times == sorted(times) and times[0] == 5.0 and times[-1] == pytest.approx(5.0 + expected)


def test_yaw_takes_the_short_way_round():
    a, b = Configuration(0, 0, 0, 3.0), Configuration(0, 0, 0, -3.0)
    assert KIN.segment_time(a, b) == pytest.approx((2 * math.pi - 6.0) / 0.5)


def test_time_limit_truncates_execution():
    path = [Configuration(0, 0, 0), Configuration(10, 0, 0)]
    ex = execute_path(EMPTY, RIG, path, KIN, 1.0, time_limit=3.5)
    assert ex.truncated
    assert ex.elapsed == pytest.approx(3.5)
    assert ex.final_pose.x == pytest.approx(3.5)
    assert [e.time for e in ex.events] == pytest.approx([0, 1, 2, 3, 3.5])


def test_events_are_rendered_after_previous_callback():
    log = []

    def meshes():
        log.append("render")
        return {}

    path = [Configuration(0, 0, 0), Configuration(2, 0, 0)]
    execute_path(EMPTY, RIG, path, KIN, 1.0, meshes=meshes, on_event=lambda ev: log.append(ev.time))
    assert log == ["render", 0.0, "render", 1.0, "render", 2.0]


def test_empty_path_and_bad_period_are_rejected():
    with pytest.raises(EmptyPathError):
        schedule([], KIN, 1.0)
    with pytest.raises(ValueError):
        schedule([Configuration(0, 0, 0)], KIN, 0.0)


def test_zero_length_path_senses_once():
    ex = execute_path(EMPTY, RIG, [Configuration(1, 1, 1)], KIN, 1.0)
    assert len(ex.events) == 1 and ex.elapsed == 0.0
