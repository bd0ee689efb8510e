import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semexplore.geometry import FrustumModel
from semexplore.metrics import (SurfaceLedger, average_resolution, compute_metrics, residual_accounting,
                                subdivide_triangles, voxelize_world)
from semexplore.semantic import SemanticRecord, resolution_at
from semexplore.voxels import FREE, OCCUPIED, RobotBody
from semexplore.world import World, box_triangles

BODY = RobotBody()
DEPTH = FrustumModel(360, 90, 30)
CAMERA = FrustumModel(120, 120, 7, 3200, 3200)


def _cube_world():
    return World.from_boxes((0, 0, 0), (8, 8, 6), [((3, 3, 2), (5, 5, 4), 1)], enclose=True)


# --- area bookkeeping ----------------------------------------------------------


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.7))
def test_subdivision_preserves_area_and_respects_size(seed, size):
    rng = np.random.default_rng(seed)
    tris = rng.uniform(-2, 2, (3, 3, 3))
    cents, areas, owner = subdivide_triangles(tris, size)
    exact = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    for t in range(3):
        assert areas[owner == t].sum() == pytest.approx(exact[t])
        longest = max(np.linalg.norm(tris[t, a] - tris[t, b]) for a, b in ((0, 1), (1, 2), (2, 0)))
        assert (owner == t).sum() == math.ceil(longest / size) ** 2
        # every centroid lies in the plane of its parent
        n = np.cross(tris[t, 1] - tris[t, 0], tris[t, 2] - tris[t, 0])
        assert np.allclose((cents[owner == t] - tris[t, 0]) @ n, 0, atol=1e-9)


def test_empty_ledger_reports_zero():
    assert SurfaceLedger(_cube_world()).percent() == pytest.approx(0.0)


def test_all_faces_marked_gives_full_coverage():
    ledger = SurfaceLedger(_cube_world())
    ledger.mark_near(1, ledger.centers, ledger.normals)
    assert ledger.total_area() == pytest.approx(24.0)
    assert ledger.percent() == pytest.approx(100.0)


def test_half_the_cube_faces_gives_half_coverage():
    ledger = SurfaceLedger(_cube_world())
    tris = box_triangles((3, 3, 2), (5, 5, 4))
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    positive = tris[n.sum(axis=1) > 0]  # the +x, +y and +z sides
    pts, _, owner = subdivide_triangles(positive, 0.1)
    normals = n[n.sum(axis=1) > 0][owner]
    ledger.mark_near(1, pts, normals / np.linalg.norm(normals, axis=1, keepdims=True))
    assert ledger.percent() == pytest.approx(50.0, abs=2.0)
    assert ledger.percent(1) == pytest.approx(ledger.percent())


def test_marks_with_opposite_normal_do_not_count():
    ledger = SurfaceLedger(_cube_world())
    ledger.mark_near(1, ledger.centers, -ledger.normals)
    assert ledger.percent() == 0.0


def test_metrics_at_start_are_zero():
    world = _cube_world()
    grid = world.empty_grid(0.2)
    s = compute_metrics(0.0, grid, SurfaceLedger(world), {}, CAMERA)
    assert s.cumulative == 0.0 and s.explored_volume == 0.0
    assert s.per_semantic == {1: 0.0} and s.resolution == {1: 0.0}


def test_average_resolution_is_the_mean_over_marked_faces():
    rec = SemanticRecord(1, 0.1)
    assert average_resolution(rec, CAMERA) == 0.0
    rec.marked_quality = np.array([[1.0, 0.1], [2.0, 0.2], [1.5, 0.0]])
    want = np.mean([3200 * 3200 / (4 * d * d * 3.0) / 1e4 for d in (1.0, 2.0, 1.5)])
    assert average_resolution(rec, CAMERA) == pytest.approx(want)
    assert resolution_at(1.0, CAMERA) == pytest.approx(3200 * 3200 / 12 / 1e4)


# --- ground truth voxels and residuals ----------------------------------------


def test_voxelized_box_marks_its_surface():
    world = World.from_boxes((0, 0, 0), (4, 4, 4), [((1.1, 1.1, 1.1), (2.9, 2.9, 2.9), 1)], enclose=False)
    g = voxelize_world(world, 0.2)
    c = g.index_of((2.0, 2.0, 2.0))
    assert g.state[c] == FREE  # hollow interior
    for p in [(1.1, 2.0, 2.0), (2.9, 2.0, 2.0), (2.0, 2.0, 1.1)]:
        assert g.state[g.index_of(p)] == OCCUPIED
    assert g.state[g.index_of((0.5, 0.5, 0.5))] == FREE


def test_open_world_has_almost_no_residual_volume():
    world = World.from_boxes((0, 0, 0), (6, 6, 4), [], enclose=True)
    rep = residual_accounting(world, world.empty_grid(0.2), (3, 3, 2), BODY, DEPTH, 2.0, math.radians(45))
    assert rep.n_audit > 0
    assert rep.volume <= 0.01 * 6 * 6 * 4


def test_sealed_cavity_stays_residual():
    # cavity of 1.8 x 1.8 x 1.0 m sealed by 0.2 m walls
    shell = [((2, 2, 1), (4.2, 4.2, 1.2), 0), ((2, 2, 2.2), (4.2, 4.2, 2.4), 0),
             ((2, 2, 1.2), (2.2, 4.2, 2.2), 0), ((4, 2, 1.2), (4.2, 4.2, 2.2), 0),
             ((2.2, 2, 1.2), (4, 2.2, 2.2), 0), ((2.2, 4, 1.2), (4, 4.2, 2.2), 0)]
    world = World.from_boxes((0, 0, 0), (6, 6, 4), shell, enclose=True)
    grid = world.empty_grid(0.2)
    rep = residual_accounting(world, grid, (1, 1, 2), BODY, DEPTH, 2.0, math.radians(45))
    # one voxel layer on each inner wall may be claimed by the shell surface
    assert rep.volume >= (1.8 - 2 * 0.2) ** 2 * (1.0 - 2 * 0.2)


def test_face_flush_with_the_floor_is_residual_surface():
    world = World.from_boxes((0, 0, 0), (8, 8, 4), [((3, 3, 0), (5, 5, 2), 1)], enclose=True)
    rep = residual_accounting(world, world.empty_grid(0.2), (1, 1, 2), BODY, DEPTH, 2.0, math.radians(45),
                              camera=CAMERA)
    bottom = 4.0
    assert rep.surface >= bottom - 1e-9
    assert rep.surface <= bottom + 0.1 * 8  # at most a thin strip along the base
    assert rep.per_semantic_surface[1] == pytest.approx(rep.surface)


def test_ledger_area_matches_triangle_areas():
    world = World.from_boxes((0, 0, 0), (20, 12, 6), [((5, 3, 2), (7, 5, 4), 1), ((13, 7, 1.6), (15, 9, 3.6), 2)])
    ledger = SurfaceLedger(world)
    for j in (1, 2):
        tris = world.semantic_triangles(j)
        exact = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1).sum()
        assert ledger.total_area(j) == pytest.approx(exact) == pytest.approx(24.0)
