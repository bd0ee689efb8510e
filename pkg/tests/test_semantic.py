import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semexplore.geometry import FrustumModel
from semexplore.mesh import (MeshInvariantError, TriangleMesh, extract_boundary_edges, filter_small_holes,
                             marching_tetrahedra, read_ply, write_ply)
from semexplore.semantic import (SemanticRecord, accumulate_points, mark_inspected, max_view_distance,
                                 quality_mask, rebuild_mesh, reconstruct_surface, resolution_at)

import oracles

# --- point accumulation -------------------------------------------------------


def test_duplicate_point_is_dropped():
    rec = SemanticRecord(1, 0.1)
    assert accumulate_points(rec, [[0.05, 0.05, 0.05]], (1, 0, 0)) == 1
    assert accumulate_points(rec, [[0.05, 0.05, 0.05]], (1, 0, 0)) == 0
    assert len(rec.points) == 1


def test_first_point_in_a_cell_survives():
    rec = SemanticRecord(1, 0.1)
    accumulate_points(rec, [[0.01, 0.01, 0.01], [0.09, 0.09, 0.09]], (1, 0, 0))
    assert rec.points.tolist() == [[0.01, 0.01, 0.01]]
    assert np.allclose(np.linalg.norm(rec.view_dirs, axis=1), 1.0)


def test_survivors_equal_occupied_cell_count():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (10_000, 3))
    rec = SemanticRecord(1, 0.1)
    # split in two batches to exercise the cross-batch cell memory
    accumulate_points(rec, pts[:4000], (5, 5, 5))
    accumulate_points(rec, pts[4000:], (5, 5, 5))
    cells = {tuple(math.floor(v / 0.1) for v in p) for p in pts.tolist()}
    assert len(rec.points) == len(cells)
    assert {tuple(math.floor(v / 0.1) for v in p) for p in rec.points.tolist()} == cells
    assert rec.raw_observations == 10_000


# --- boundary extraction ------------------------------------------------------

TET_V = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]


def test_single_triangle_has_three_boundary_edges():
    loops = extract_boundary_edges(TriangleMesh(TET_V[:3], [[0, 1, 2]]))
    assert len(loops) == 1 and len(loops[0].edges) == 3
    assert loops[0].perimeter == pytest.approx(2 + math.sqrt(2))


def test_shared_edge_is_not_a_boundary():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    loops = extract_boundary_edges(m)
    assert len(loops) == 1 and len(loops[0].edges) == 4
    assert (0, 2) not in {e.vertices for e in loops[0].edges}


def test_closed_tetrahedron_has_no_boundary():
    m = TriangleMesh(TET_V, [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    assert extract_boundary_edges(m) == []
    m.check_edge_invariant()


def test_edge_with_three_faces_violates_invariant():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], [[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    with pytest.raises(MeshInvariantError):
        m.check_edge_invariant()


def _random_soup(rng, n_faces, n_verts):
    f = set()
    while len(f) < n_faces:
        tri = rng.choice(n_verts, 3, replace=False)
        f.add(tuple(sorted(tri.tolist())))
    return rng.uniform(0, 1, (n_verts, 3)), np.array(sorted(f))


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_boundary_edges_match_edge_count_scan(seed, n_faces):
    rng = np.random.default_rng(seed)
    v, f = _random_soup(rng, n_faces, 12 + n_faces // 2)
    mesh = TriangleMesh(v, f)
    want, _ = oracles.boundary_edges(f)
    got = [e.vertices for lp in extract_boundary_edges(mesh) for e in lp.edges]
    assert len(got) == len(set(got))
    assert set(got) == want


def _square_loop(offset, side):
    x, y = offset
    return [[x, y, 0], [x + side, y, 0], [x + side, y + side, 0], [x, y + side, 0]]


def test_filter_threshold_zero_is_identity():
    m = TriangleMesh(_square_loop((0, 0), 1), [[0, 1, 2], [0, 2, 3]])
    loops = extract_boundary_edges(m)
    assert filter_small_holes(loops, 0.0) == loops


def test_small_loop_is_removed():
    m = TriangleMesh(TET_V[:3], [[0, 1, 2]])
    m.vertices *= 0.1 / (2 + math.sqrt(2))
    loops = extract_boundary_edges(TriangleMesh(m.vertices, m.faces))
    assert loops[0].perimeter == pytest.approx(0.1)
    assert filter_small_holes(loops, 0.5) == []


@given(st.lists(st.floats(0.05, 3.0), min_size=1, max_size=8), st.floats(0.0, 10.0))
def test_filter_partitions_by_recomputed_perimeter(sides, threshold):
    verts, faces = [], []
    for k, s in enumerate(sides):
        b = len(verts)
        verts += _square_loop((10.0 * k, 0.0), s)
        faces += [[b, b + 1, b + 2], [b, b + 2, b + 3]]
    mesh = TriangleMesh(verts, faces)
    loops = extract_boundary_edges(mesh)
    kept = filter_small_holes(loops, threshold)

    def perimeter(lp):
        return sum(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]) for a, b in (e.vertices for e in lp.edges))

    assert [lp.id for lp in kept] == [lp.id for lp in loops if perimeter(lp) >= threshold]
    assert len(loops) == len(sides)


# --- marching tetrahedra ----------------------------------------------------------


def _sphere_field(n=14, r=0.45):
    ax = np.linspace(-0.65, 0.65, n)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.sqrt(X ** 2 + Y ** 2 + Z ** 2) - r, ax[1] - ax[0]


def test_sphere_level_set_is_closed_and_outward():
    sdf, h = _sphere_field()
    mesh = marching_tetrahedra(sdf, np.ones(tuple(s - 1 for s in sdf.shape), bool), (-0.65,) * 3, h)
    mesh.check_edge_invariant()
    assert extract_boundary_edges(mesh) == []
    assert np.all(np.einsum("ij,ij->i", mesh.normals, mesh.centroids) > 0)
    assert mesh.areas.sum() == pytest.approx(4 * math.pi * 0.45 ** 2, rel=0.05)


def test_masked_cells_leave_an_open_surface():
    sdf, h = _sphere_field()
    mask = np.ones(tuple(s - 1 for s in sdf.shape), bool)
    mask[9:] = False
    mesh = marching_tetrahedra(sdf, mask, (-0.65,) * 3, h)
    mesh.check_edge_invariant()
    got = {e.vertices for lp in extract_boundary_edges(mesh) for e in lp.edges}
    assert got and got == oracles.boundary_edges(mesh.faces)[0]


# --- surface reconstruction -------------------------------------------------------


def _face_points(lo, hi, axis, value, spacing=0.05):
    a, b = [k for k in range(3) if k != axis]
    u = np.arange(lo[a], hi[a] + 1e-9, spacing)
    v = np.arange(lo[b], hi[b] + 1e-9, spacing)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.zeros((U.size, 3))
    pts[:, a], pts[:, b], pts[:, axis] = U.ravel(), V.ravel(), value
    return pts


def _cube_record(faces, lo=(1.0, 1.0, 1.0), hi=(3.0, 3.0, 3.0)):
    rec = SemanticRecord(1, 0.1)
    centre = (np.asarray(lo) + hi) / 2
    for axis, side in faces:
        pts = _face_points(lo, hi, axis, (lo, hi)[side][axis])
        n = np.zeros(3)
        n[axis] = 1 if side else -1
        # a sensor 3 m out along the face normal
        accumulate_points(rec, pts, centre + n * 4.0)
    return rec


def test_one_sampled_face_gives_an_open_patch():
    rec = _cube_record([(0, 0)])
    assert rebuild_mesh(rec)
    mesh = rec.mesh
    assert np.all(np.abs(mesh.vertices[:, 0] - 1.0) < 0.03)
    assert np.all(mesh.normals[:, 0] < -0.9)
    loops = filter_small_holes(extract_boundary_edges(mesh), 0.6)
    assert len(loops) == 1
    assert 8.0 <= loops[0].perimeter <= 10.5
    # meshed cells have centres within one cell diagonal of a sample
    reach = 0.1 * math.sqrt(3) + 0.05
    assert 4.0 <= mesh.areas.sum() <= (2.0 + 2 * reach) ** 2


def test_fully_sampled_cube_is_closed():
    rec = _cube_record([(a, s) for a in range(3) for s in (0, 1)])
    rebuild_mesh(rec)
    rec.mesh.check_edge_invariant()
    assert filter_small_holes(extract_boundary_edges(rec.mesh), 0.6) == []
    assert rec.mesh.areas.sum() == pytest.approx(24.0, rel=0.05)
    outward = rec.mesh.centroids - 2.0
    assert np.mean(np.einsum("ij,ij->i", rec.mesh.normals, outward) > 0) > 0.99


def test_three_points_give_an_empty_mesh():
    rec = SemanticRecord(1, 0.1)
    accumulate_points(rec, [[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0]], (0, 0, 2))
    rebuild_mesh(rec)
    assert rec.mesh.n_faces == 0
    assert reconstruct_surface(rec.points, rec.view_dirs, 0.1).n_faces == 0


def test_rebuild_is_skipped_when_nothing_changed():
    rec = _cube_record([(0, 0)])
    assert rebuild_mesh(rec)
    assert not rebuild_mesh(rec)
    accumulate_points(rec, [[0.5, 0.5, 0.5]], (0, 0, 0))
    assert rebuild_mesh(rec)


def test_marks_survive_a_rebuild():
    rec = _cube_record([(0, 0)])
    rebuild_mesh(rec)
    n = rec.mesh.n_faces
    ids = np.arange(0, n, 2)
    mark_inspected(rec, ids, np.full(len(ids), 1.0), np.full(len(ids), 0.1), 2.0, math.radians(45))
    before = rec.mesh.centroids[rec.inspected]
    # new data on another face changes the mesh
    accumulate_points(rec, _face_points((1, 1, 1), (3, 3, 3), 1, 1.0), (2, -2, 2))
    rebuild_mesh(rec)
    after = rec.mesh.centroids[rec.inspected]
    # away from the new face the surface is unchanged, so every mark carries over
    before = before[before[:, 1] > 1.5]
    d = np.linalg.norm(before[:, None] - after[None], axis=2).min(axis=1)
    assert np.all(d < 0.1)
    assert np.all(rec.best_distance[rec.inspected] == 1.0)


# --- inspection quality -----------------------------------------------------------


def test_max_view_distance_example():
    cam = FrustumModel(85, 64, 7, 720, 540)
    assert max_view_distance(5.06, cam) == pytest.approx(1.83, abs=0.01)


def test_max_view_distance_scaling():
    cam = FrustumModel(120, 120, 7, 3200, 3200)
    assert max_view_distance(84.0, cam) == pytest.approx(max_view_distance(21.0, cam) / 2)
    big = FrustumModel(120, 120, 7, 6400, 6400)
    assert max_view_distance(21.0, big) > max_view_distance(21.0, cam)
    assert resolution_at(max_view_distance(21.0, cam), cam) == pytest.approx(21.0)
    with pytest.raises(ValueError):
        max_view_distance(0, cam)
    with pytest.raises(ValueError):
        max_view_distance(1, FrustumModel(90, 90, 7))


def _marked_record(n=20):
    rec = SemanticRecord(1, 0.1)
    v = np.random.default_rng(0).uniform(0, 1, (n + 2, 3))
    rec.mesh = TriangleMesh(v, [[i, i + 1, i + 2] for i in range(n)])
    rec.inspected = np.zeros(n, bool)
    rec.best_distance = np.full(n, np.inf)
    rec.best_angle = np.full(n, np.inf)
    return rec


def test_angle_at_threshold_is_not_inspected():
    rec = _marked_record()
    theta = math.radians(45)
    assert mark_inspected(rec, [0], [1.0], [theta], 2.0, theta) == 0
    assert not rec.inspected[0]
    assert mark_inspected(rec, [0], [1.0], [np.nextafter(theta, 0)], 2.0, theta) == 1


def test_distance_at_threshold_is_inspected():
    rec = _marked_record()
    assert mark_inspected(rec, [3], [2.0], [0.1], 2.0, math.radians(45)) == 1
    assert rec.inspected[3]
    assert mark_inspected(rec, [4], [np.nextafter(2.0, 3)], [0.1], 2.0, math.radians(45)) == 0


def test_quality_mask_conventions():
    assert quality_mask([1.0, 1.0, 2.0], [0.5, 0.4, 0.4], 1.0, 0.5).tolist() == [False, True, False]


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_batch_marking_matches_condition_oracle(seed):
    rng = np.random.default_rng(seed)
    rec = _marked_record()
    l_max, theta = 2.0, math.radians(45)
    total_new = 0
    seen_ok: dict[int, list] = {}
    for _ in range(3):
        f = rng.integers(0, 20, 30)
        d = rng.choice([1.0, 2.0, 2.5, 1.5], 30)
        a = rng.choice([0.2, theta, 0.9, 0.5], 30)
        total_new += mark_inspected(rec, f, d, a, l_max, theta)
        for fi, di, ai in zip(f, d, a):
            if di <= l_max and ai < theta:
                seen_ok.setdefault(int(fi), []).append((di, ai))
    assert set(np.flatnonzero(rec.inspected).tolist()) == set(seen_ok)
    assert total_new == len(seen_ok) == len(rec.marked_points)
    for fi, obs in seen_ok.items():
        assert rec.best_distance[fi] == min(o[0] for o in obs)
        assert rec.best_angle[fi] == min(o[1] for o in obs)


def test_marking_is_idempotent():
    rec = _marked_record()
    args = ([1, 2, 2], [1.0, 1.0, 1.0], [0.1, 0.1, 0.1], 2.0, 0.5)
    assert mark_inspected(rec, *args) == 2
    assert mark_inspected(rec, *args) == 0
    assert rec.n_inspected == 2 and len(rec.marked_points) == 2


def test_ply_round_trip(tmp_path):
    rec = _marked_record()
    mark_inspected(rec, [1, 5], [1.0, 1.5], [0.1, 0.2], 2.0, 0.5)
    write_ply(tmp_path / "m.ply", rec.mesh, rec.inspected, rec.best_distance, rec.best_angle)
    mesh, props = read_ply(tmp_path / "m.ply")
    assert np.allclose(mesh.vertices, rec.mesh.vertices, atol=1e-6)
    assert np.array_equal(mesh.faces, rec.mesh.faces)
    assert np.array_equal(props["inspected"], rec.inspected)
    assert props["best_distance"][1] == pytest.approx(1.0)
    assert props["best_distance"][0] == -1.0
