from __future__ import annotations

import math

import numpy as np
import pytest

from lanetrace.geometry import (
    CenterlineGraph,
    EgoPose,
    GraphBuilder,
    GridSpec,
    ego_to_pixel,
    ego_to_world,
    geodesic_ball,
    graph_from_text,
    graph_to_text,
    nearest_vertex,
    pixel_to_ego,
    project_to_graph,
    relative_pose,
    resample,
    world_to_ego,
)

from oracles import ball_bruteforce


def test_world_to_ego_identity_pose():
    assert np.allclose(world_to_ego(EgoPose(), (3.0, 4.0)), (3.0, 4.0))


def test_world_to_ego_hand_computed():
    # pose (1, 0, pi/2): a point 2 m along world +y sits 2 m ahead of ego
    p = world_to_ego(EgoPose(1.0, 0.0, math.pi / 2), (1.0, 2.0))
    assert np.allclose(p, (2.0, 0.0), atol=1e-12)


def test_se2_round_trip_randomized():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        pose = EgoPose(*rng.uniform(-50, 50, size=2), rng.uniform(-math.pi, math.pi))
        p = rng.uniform(-100, 100, size=2)
        back = ego_to_world(pose, world_to_ego(pose, p))
        worst = max(worst, float(np.abs(back - p).max()))
    assert worst < 1e-9


def test_relative_pose_identity_is_exact():
    pose = EgoPose(12.34, -5.6, 0.789)
    rel = relative_pose(pose, pose)
    assert rel.x == 0.0 and rel.y == 0.0 and rel.yaw == 0.0


def test_yaw_normalization():
    assert EgoPose(0, 0, 3 * math.pi).yaw == pytest.approx(math.pi)
    assert -math.pi < EgoPose(0, 0, -math.pi).yaw <= math.pi


def test_ego_to_pixel_center_convention():
    spec = GridSpec(200, 200, 0.25)
    px, inside = ego_to_pixel((0.0, 0.0), spec)
    assert inside and np.allclose(px, (100.0, 100.0))


def test_ego_to_pixel_out_of_bounds():
    spec = GridSpec(200, 200, 0.25)
    px, inside = ego_to_pixel((25.0, 0.0), spec)
    assert px[1] == pytest.approx(200.0)
    assert not inside


def test_ego_to_pixel_arithmetic():
    spec = GridSpec(200, 200, 0.25)
    px, inside = ego_to_pixel((1.0, -0.5), spec)
    assert inside
    assert np.allclose(px, (98.0, 104.0))


def test_pixel_round_trip():
    spec = GridSpec(200, 200, 0.25)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-30, 30, size=(200, 2))
    px, _ = ego_to_pixel(pts, spec)
    assert np.abs(pixel_to_ego(px, spec) - pts).max() < 1e-9


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(200, 200, 0.0)
    with pytest.raises(ValueError):
        GridSpec(199, 200, 0.25)


# ---------------------------------------------------------------------------
# graph invariants
# ---------------------------------------------------------------------------

def test_graph_rejects_duplicates_and_self_loops():
    with pytest.raises(ValueError):
        CenterlineGraph([[0, 0], [0, 0]], [])
    with pytest.raises(ValueError):
        CenterlineGraph([[0, 0], [1, 0]], [(0, 0)])
    with pytest.raises(ValueError):
        CenterlineGraph([[0, 0], [1, 0]], [(0, 5)])


def test_resample_uniform_subdivision():
    g = CenterlineGraph([[0.0, 0.0], [10.0, 0.0]], [(0, 1)])
    r = resample(g, 1.0)
    assert r.n_vertices == 11
    assert r.n_edges == 10
    assert r.edge_lengths().max() <= 1.0 + 1e-9


def test_resample_preserves_junction_degree():
    # Y junction at the origin
    g = CenterlineGraph([[0, 0], [-4, 0], [3, 3], [3, -3]],
                        [(1, 0), (0, 2), (0, 3)])
    r = resample(g, 0.5)
    assert r.degrees()[0] == 3
    assert np.allclose(r.vertices[0], (0.0, 0.0))


def test_resample_length_preserved_and_idempotent():
    rng = np.random.default_rng(2)
    pts = np.cumsum(rng.uniform(-1, 1, size=(15, 2)), axis=0)
    g = CenterlineGraph(pts, [(i, i + 1) for i in range(14)], validate=False)
    r = resample(g, 0.25)
    assert r.edge_lengths().max() <= 0.25 + 1e-9
    assert r.total_length() == pytest.approx(g.total_length(), abs=1e-6)
    r2 = resample(r, 0.25)
    assert r2.n_vertices == r.n_vertices
    assert np.abs(r2.vertices - r.vertices).max() < 1e-9


def test_resample_empty():
    assert resample(CenterlineGraph(), 1.0).is_empty()


def test_geodesic_ball_zero_radius():
    g = CenterlineGraph([[0, 0], [1, 0], [2, 0]], [(0, 1), (1, 2)])
    assert geodesic_ball(g, 1, 0.0) == [1]


def test_geodesic_ball_chain_count():
    verts = [[float(i), 0.0] for i in range(8)]
    g = CenterlineGraph(verts, [(i, i + 1) for i in range(7)])
    assert geodesic_ball(g, 0, 3.5, directed=True) == [0, 1, 2, 3]


def test_geodesic_ball_directionality():
    g = CenterlineGraph([[0, 0], [1, 0], [2, 0]], [(0, 1), (1, 2)])
    assert geodesic_ball(g, 2, 5.0, directed=True) == [2]
    assert geodesic_ball(g, 2, 5.0, directed=False) == [0, 1, 2]


def test_geodesic_ball_matches_bruteforce():
    rng = np.random.default_rng(3)
    from oracles import random_graph

    for _ in range(25):
        g = random_graph(rng, max_vertices=50)
        src = int(rng.integers(0, g.n_vertices))
        radius = float(rng.uniform(0.5, 8.0))
        for directed in (True, False):
            assert geodesic_ball(g, src, radius, directed=directed) == \
                ball_bruteforce(g, src, radius, directed=directed)


def test_geodesic_ball_monotone_in_radius():
    rng = np.random.default_rng(4)
    from oracles import random_graph

    for _ in range(10):
        g = random_graph(rng, max_vertices=30)
        src = int(rng.integers(0, g.n_vertices))
        r1, r2 = sorted(rng.uniform(0.5, 8.0, size=2))
        assert set(geodesic_ball(g, src, r1)) <= set(geodesic_ball(g, src, r2))


def test_nearest_vertex_exact_and_tie_break():
    g = CenterlineGraph([[0, 0], [1, 0], [2, 0], [4, 0]],
                        [(0, 1), (1, 2), (2, 3)])
    i, d = nearest_vertex(g, (2.0, 0.0))
    assert i == 2 and d == 0.0
    # (3, 0) is equidistant from vertices 2 and 3 -> lowest index wins
    i, _ = nearest_vertex(g, (3.0, 0.0))
    assert i == 2


def test_nearest_vertex_matches_linear_scan():
    rng = np.random.default_rng(5)
    verts = rng.uniform(0, 20, size=(60, 2))
    g = CenterlineGraph(verts, [(i, i + 1) for i in range(59)], validate=False)
    for _ in range(500):
        p = rng.uniform(-5, 25, size=2)
        i, d = nearest_vertex(g, p)
        dists = np.hypot(*(verts - p).T)
        assert i == int(np.argmin(dists))
        assert d == pytest.approx(float(dists.min()))


def test_nearest_vertex_empty_graph_errors():
    with pytest.raises(ValueError):
        nearest_vertex(CenterlineGraph(), (0, 0))


def test_project_to_graph():
    g = CenterlineGraph([[0, 0], [10, 0]], [(0, 1)])
    dist, edge, proj = project_to_graph(g, (3.0, 2.0))
    assert dist == pytest.approx(2.0)
    assert edge == 0
    assert np.allclose(proj, (3.0, 0.0))


def test_serialization_round_trip():
    rng = np.random.default_rng(6)
    verts = rng.uniform(-100, 100, size=(20, 2))
    tags = rng.integers(0, 4, size=20)
    g = CenterlineGraph(verts, [(i, i + 1) for i in range(19)], tags,
                        validate=False)
    text = graph_to_text(g)
    g2 = graph_from_text(text)
    # canonical form: a second serialization is bit-identical
    assert graph_to_text(g2) == text
    assert g2.n_vertices == g.n_vertices and g2.n_edges == g.n_edges
    assert np.abs(g2.vertices - g.vertices).max() < 1e-6
    assert np.array_equal(g2.tags, tags)


def test_builder_merges_and_dedups_edges():
    b = GraphBuilder()
    i = b.add_vertex((0.0, 0.0))
    j = b.add_vertex((1.0, 0.0))
    assert b.add_vertex((0.0, 1e-9)) == i
    b.add_edge(i, j)
    b.add_edge(i, j)
    b.add_edge(i, i)
    g = b.build()
    assert g.n_vertices == 2 and g.n_edges == 1
