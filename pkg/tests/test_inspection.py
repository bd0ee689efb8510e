import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semexplore.geometry import Configuration, FrustumModel
from semexplore.graph import PlanGraph
from semexplore.inspection import (InspectionGraph, InspectionParams, NoCoverableFacesError, VisibilityRecord,
                                   build_inspection_graph, face_visibility, order_vertices, plan_inspection,
                                   select_coverage_vertices)
from semexplore.kinematics import Kinematics
from semexplore.mesh import TriangleMesh
from semexplore.metrics import voxelize_world
from semexplore.semantic import SemanticRecord, mark_inspected
from semexplore.tsp import (DisconnectedPairError, brute_force_tour, held_karp, nearest_neighbor, solve_open_tour,
                            tour_cost)
from semexplore.voxels import OccupancyGrid, RobotBody
from semexplore.world import World, render_camera_observation

import oracles

BODY = RobotBody()
KIN = Kinematics()
CAMERA = FrustumModel(120, 120, 7, 3200, 3200)
PARAMS = InspectionParams(l_max=2.0, theta_max=math.radians(45), n_samples=150, occlusion_tail=0.5)


# --- tour ordering ------------------------------------------------------------


def _euclid(pts):
    return np.linalg.norm(pts[:, None] - pts[None], axis=2)


def test_square_tour_is_optimal():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    c = _euclid(pts)
    order, cost = solve_open_tour(c)
    assert cost == pytest.approx(oracles.best_open_tour(c)) == pytest.approx(3.0)


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8), st.booleans())
def test_tour_near_optimal_and_no_worse_than_greedy(seed, n, symmetric):
    rng = np.random.default_rng(seed)
    c = _euclid(rng.uniform(0, 10, (n, 3))) if symmetric else rng.uniform(1, 10, (n, n))
    order, cost = solve_open_tour(c, start=0)
    assert sorted(order) == list(range(n)) and order[0] == 0
    assert cost == pytest.approx(tour_cost(c, order))
    assert cost <= oracles.best_open_tour(c, start=0) * 1.05 + 1e-9
    assert cost <= oracles.nn_tour_cost(c, 0) + 1e-9


def test_package_brute_force_agrees_with_oracle():
    c = np.random.default_rng(3).uniform(1, 5, (6, 6))
    assert brute_force_tour(c, 0)[1] == pytest.approx(oracles.best_open_tour(c, 0))
    assert brute_force_tour(c)[1] == pytest.approx(oracles.best_open_tour(c))


def test_unreachable_pair_is_an_error():
    c = np.array([[0, 1], [np.inf, 0]])
    with pytest.raises(DisconnectedPairError):
        solve_open_tour(c)
    with pytest.raises(ValueError):
        nearest_neighbor(np.zeros((2, 3)))


def _grid_graph(n=4, step=1.0):
    g = PlanGraph(Configuration(0, 0, 1), KIN)
    ids = {(0, 0): g.root}
    for i in range(n):
        for j in range(n):
            if (i, j) != (0, 0):
                ids[i, j] = g.add_vertex(Configuration(i * step, j * step, 1))
    for (i, j), v in ids.items():
        for di, dj in ((1, 0), (0, 1)):
            if (i + di, j + dj) in ids:
                g.add_edge(v, ids[i + di, j + dj])
    return g, ids


def test_single_vertex_order_costs_the_approach():
    g, ids = _grid_graph()
    order, cost = order_vertices(g, [ids[2, 3]])
    assert order == [ids[2, 3]]
    assert cost == pytest.approx(5.0)


def test_square_of_vertices_matches_exhaustive_order():
    g, ids = _grid_graph()
    vs = [ids[1, 1], ids[1, 3], ids[3, 3], ids[3, 1]]
    order, cost = order_vertices(g, vs)
    t = {v: g.dijkstra(v)[0] for v in [g.root] + vs}
    best = min(t[g.root][p[0]] + sum(t[a][b] for a, b in zip(p, p[1:])) for p in itertools.permutations(vs))
    assert cost == pytest.approx(best)
    assert sorted(order) == sorted(vs)


# --- set cover ----------------------------------------------------------------


def _vis(sets):
    return {i: VisibilityRecord(i, frozenset(s)) for i, s in sets.items()}


def test_one_vertex_covering_all():
    vis = _vis({1: {0, 1, 2, 3}, 2: {1, 2}, 3: {3}})
    assert select_coverage_vertices(vis, 0.2, np.random.default_rng(0)) == [1]


def test_disjoint_vertices_are_both_chosen():
    vis = _vis({1: {0, 1}, 2: {2, 3}})
    assert sorted(select_coverage_vertices(vis, 1.0, np.random.default_rng(0))) == [1, 2]


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_cover_reaches_the_full_union(seed, eta):
    rng = np.random.default_rng(seed)
    sets = {i: set(rng.choice(40, int(rng.integers(0, 12)), replace=False).tolist()) for i in range(1, 11)}
    chosen = select_coverage_vertices(_vis(sets), eta, rng)
    union = set().union(*sets.values())
    assert set().union(*(sets[i] for i in chosen)) == union
    assert len(chosen) == len(set(chosen))
    assert all(sets[i] for i in chosen)


def test_eta_must_be_a_fraction():
    with pytest.raises(ValueError):
        select_coverage_vertices(_vis({1: {0}}), 0.0, np.random.default_rng(0))


# --- visibility ---------------------------------------------------------------


def test_face_straight_ahead_is_the_only_visible_face():
    mesh = TriangleMesh([[3, -0.1, 0.9], [3, 0.2, 0.9], [3, -0.1, 1.2], [3, 5, 5], [3, 5.1, 5], [3, 5, 5.1]],
                        [[0, 2, 1], [3, 5, 4]])
    grid = OccupancyGrid.from_bounds((-1, -3, 0), (8, 8, 8), 0.2)
    grid.state[:] = 1
    c = mesh.centroids[0]
    conf = Configuration(c[0] - 1.5, c[1], c[2])
    got = face_visibility(conf, mesh.centroids, mesh.normals, np.arange(2), grid, CAMERA, PARAMS)
    assert got.tolist() == [0]


def _box_world():
    lo, hi = (4.0, 4.0, 1.0), (6.0, 6.0, 3.0)
    world = World.from_boxes((0, 0, 0), (10, 10, 4), [(lo, hi, 1)], enclose=False)
    v, f = oracles.box_mesh(lo, hi, 4)
    grid = voxelize_world(world, 0.2)
    return world, TriangleMesh(v, f), grid


def test_visibility_sets_match_per_face_oracle():
    world, mesh, grid = _box_world()
    ig = build_inspection_graph(mesh, np.zeros(mesh.n_faces, bool), grid, BODY, KIN, Configuration(3.2, 3.2, 2),
                                CAMERA, np.random.default_rng(1), PARAMS)
    assert len(ig.sampled) > 50
    faces = np.arange(mesh.n_faces)
    nonempty = 0
    for i in ig.sampled:
        v = ig.graph.vertices[i]
        want = oracles.inspectable_faces(v.position, v.yaw, CAMERA, mesh.centroids, mesh.normals, faces,
                                         PARAMS.l_max, PARAMS.theta_max, grid.state, grid.origin, grid.resolution,
                                         PARAMS.occlusion_tail)
        assert set(ig.visibility[i].faces) == want
        nonempty += bool(want)
    assert nonempty > 10


def test_fully_inspected_mesh_has_empty_visibility():
    world, mesh, grid = _box_world()
    ig = build_inspection_graph(mesh, np.ones(mesh.n_faces, bool), grid, BODY, KIN, Configuration(3.2, 3.2, 2),
                                CAMERA, np.random.default_rng(1), PARAMS)
    assert all(not r.faces for r in ig.visibility.values())
    with pytest.raises(NoCoverableFacesError):
        plan_inspection(ig, 0.2, 3, np.random.default_rng(0))


# --- best-of-k planning -------------------------------------------------------


def _box_graph(seed=1):
    world, mesh, grid = _box_world()
    ig = build_inspection_graph(mesh, np.zeros(mesh.n_faces, bool), grid, BODY, KIN, Configuration(3.2, 3.2, 2),
                                CAMERA, np.random.default_rng(seed), PARAMS)
    return world, mesh, grid, ig


def test_single_candidate_equals_one_cover_and_order_run():
    *_, ig = _box_graph()
    plan = plan_inspection(ig, 0.2, 1, np.random.default_rng(7))
    sub = np.random.default_rng(7).spawn(1)[0]
    vc = select_coverage_vertices(ig.visibility, 0.2, sub)
    order, cost = order_vertices(ig.graph, vc)
    assert plan.order == order and plan.cost == pytest.approx(cost)


def test_best_of_k_is_the_cheapest_and_covers_everything():
    *_, ig = _box_graph()
    plan = plan_inspection(ig, 0.2, 10, np.random.default_rng(3))
    assert len(plan.candidates) == 10
    assert all(plan.cost <= c.cost for c in plan.candidates)
    assert plan.covered == ig.union()
    assert plan.path[0] == ig.graph.vertices[ig.graph.root]
    for a, b in zip(plan.path, plan.path[1:]):
        assert ig.graph.vertices.index(b) in ig.graph.adj[ig.graph.vertices.index(a)]
    assert KIN.path_time(plan.path) == pytest.approx(plan.cost)


def test_executing_the_plan_inspects_every_coverable_face():
    world, mesh, grid, ig = _box_graph()
    plan = plan_inspection(ig, 0.2, 3, np.random.default_rng(0))
    rec = SemanticRecord(1, 0.1, mesh=mesh, inspected=np.zeros(mesh.n_faces, bool),
                         best_distance=np.full(mesh.n_faces, np.inf), best_angle=np.full(mesh.n_faces, np.inf))
    for conf in plan.path:
        obs = render_camera_observation(world, {1: mesh}, conf, CAMERA, 0.3)
        f, d, a = obs.for_semantic(1)
        mark_inspected(rec, f, d, a, PARAMS.l_max, PARAMS.theta_max)
    assert set(np.flatnonzero(rec.inspected).tolist()) >= ig.union()
    # top and bottom centres need steeper views than the camera allows; the sides do not
    sides = set(np.flatnonzero(np.abs(mesh.normals[:, 2]) < 0.5).tolist())
    assert len(ig.union() & sides) >= 0.9 * len(sides)


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), st.integers(9, 14))
def test_larger_tours_use_local_search_and_beat_greedy(seed, n):
    c = _euclid(np.random.default_rng(seed).uniform(0, 10, (n, 3)))
    order, cost = solve_open_tour(c, start=0)
    assert sorted(order) == list(range(n)) and order[0] == 0
    assert cost <= oracles.nn_tour_cost(c, 0) + 1e-9


def test_dynamic_program_matches_exhaustive_search():
    for seed in range(5):
        c = np.random.default_rng(seed).uniform(1, 9, (7, 7))
        for start in (None, 0, 3):
            order, cost = held_karp(c, start)
            assert cost == pytest.approx(oracles.best_open_tour(c, start))
            assert cost == pytest.approx(tour_cost(c, order))
            assert start is None or order[0] == start
