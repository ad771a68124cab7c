from __future__ import annotations

import math

import numpy as np
import pytest

from lanetrace.geometry import CenterlineGraph, EgoPose, GridSpec
from lanetrace.predictors import (
    LabelConfig,
    OraclePredictor,
    PredictedVertex,
    PredictorOutput,
    StepContext,
    WalkerPredictor,
    label_next,
)

CFG = LabelConfig(step_px=8.0, match_radius_px=6.0, coverage_radius_px=3.0)
SHAPE = (120, 120)


def _hist():
    return np.zeros(SHAPE, dtype=bool)


def _lane_px(row=50.0, c0=10.0, c1=90.0):
    # graph in pixel frame, vertices are (x=col, y=row)
    cols = np.arange(c0, c1 + 1.0, 4.0)
    verts = [(c, row) for c in cols]
    return CenterlineGraph(verts, [(i, i + 1) for i in range(len(verts) - 1)])


def test_label_off_graph_returns_stop():
    g = _lane_px()
    assert label_next((30.0, 50.0), g, _hist(), CFG) == []  # 20 px off, r_m=6


def test_label_straight_lane_one_step_downstream():
    g = _lane_px()
    labels = label_next((50.0, 30.0), g, _hist(), CFG)
    assert len(labels) == 1
    assert np.allclose(labels[0], (50.0, 38.0), atol=0.5)
    # arc-length oracle: label sits exactly on the centerline
    assert abs(labels[0][0] - 50.0) <= 0.5


def test_label_split_vertex_two_branches():
    verts = [(30, 50), (50, 50), (70, 50), (62, 38)]
    g = CenterlineGraph(verts, [(0, 1), (1, 2), (1, 3)])
    labels = label_next((50.0, 50.0), g, _hist(), CFG)
    assert len(labels) == 2
    got = sorted((round(r, 2), round(c, 2)) for r, c in labels)
    want_straight = (50.0, 58.0)
    ang = math.atan2(-12, 12)
    want_branch = (50.0 + 8 * math.sin(ang), 50.0 + 8 * math.cos(ang))
    assert got[0] == pytest.approx((round(want_branch[0], 2),
                                    round(want_branch[1], 2)), abs=0.01)
    assert got[1] == want_straight


def test_label_explored_branch_filtered():
    verts = [(30, 50), (50, 50), (70, 50), (62, 38)]
    g = CenterlineGraph(verts, [(0, 1), (1, 2), (1, 3)])
    hist = _hist()
    hist[49:52, 28:62] = True  # incoming arm and the straight branch marked
    labels = label_next((50.0, 50.0), g, hist, CFG)
    assert len(labels) == 1
    assert labels[0][0] < 50.0  # the diagonal branch survives


def test_label_junction_out_degree_k():
    center = (60.0, 60.0)
    verts = [(60, 60)]
    edges = []
    for k, ang in enumerate((0.1, 1.7, 3.4, 4.9)):
        verts.append((60 + 20 * math.cos(ang), 60 + 20 * math.sin(ang)))
        edges.append((0, k + 1))
    g = CenterlineGraph(verts, edges)
    labels = label_next((60.0, 60.0), g, _hist(), CFG)
    assert len(labels) == 4
    from lanetrace.geometry import project_to_graph

    for rc in labels:
        dist, _, _ = project_to_graph(g, (rc[1], rc[0]))
        assert dist <= 0.5


def test_label_monotone_in_history():
    rng = np.random.default_rng(0)
    for _ in range(20):
        verts = [(30, 50), (50, 50), (70, 50), (64, 36), (64, 64)]
        g = CenterlineGraph(verts, [(0, 1), (1, 2), (1, 3), (1, 4)])
        h1 = rng.random(SHAPE) < 0.02
        h2 = h1 | (rng.random(SHAPE) < 0.05)
        v_t = (50.0 + rng.uniform(-3, 3), 50.0 + rng.uniform(-3, 3))
        assert len(label_next(v_t, g, h2, CFG)) <= len(label_next(v_t, g, h1, CFG))


def test_label_stops_at_lane_end():
    g = _lane_px(c0=10.0, c1=50.0)
    # one step before the end: lands on the terminal vertex
    labels = label_next((50.0, 44.0), g, _hist(), CFG)
    assert len(labels) == 1
    assert labels[0][1] == pytest.approx(50.0)
    # at the end: stop
    assert label_next((50.0, 50.0), g, _hist(), CFG) == []


def _ctx(v_t=(100.0, 100.0)):
    return StepContext(v_t=np.array(v_t), pose=EgoPose(), spec=GridSpec(),
                       history=np.zeros((200, 200), dtype=bool))


def test_oracle_predict_move_and_probability():
    gt = CenterlineGraph([[-10.0, 0.0], [15.0, 0.0]], [(0, 1)])
    oracle = OraclePredictor(gt, CFG)
    out = oracle.predict(None, _ctx())
    assert len(out.vertices) == 1
    v = out.vertices[0]
    assert v.p == 1.0
    assert (v.dx, v.dy) == pytest.approx((8.0, 0.0))


def test_oracle_predict_empty_off_graph():
    gt = CenterlineGraph([[-10.0, 5.0], [15.0, 5.0]], [(0, 1)])  # 20 px away
    oracle = OraclePredictor(gt, CFG)
    assert oracle.predict(None, _ctx()).vertices == []


def test_oracle_clamps_to_roi_boundary():
    gt = CenterlineGraph([[-10.0, 0.0], [15.0, 0.0]], [(0, 1)])
    oracle = OraclePredictor(gt, LabelConfig(step_px=40.0), roi_size=64)
    out = oracle.predict(None, _ctx())
    assert out.vertices[0].dx == pytest.approx(32.0)
    assert out.vertices[0].dy == pytest.approx(0.0)


def test_output_validation():
    with pytest.raises(ValueError):
        PredictorOutput([PredictedVertex(0, 0, 1.2)]).validate(32, 8)
    with pytest.raises(ValueError):
        PredictorOutput([PredictedVertex(40, 0, 0.5)]).validate(32, 8)
    ok = PredictorOutput([PredictedVertex(8, 0, 0.5)]).validate(32, 8)
    assert len(ok.vertices) == 1


# ---------------------------------------------------------------------------
# walker
# ---------------------------------------------------------------------------

def _roi_with_lane(size=65, sigma=1.5, vertical_down=False):
    c = size // 2
    rows = np.arange(size)[:, None] * np.ones((1, size))
    cols = np.ones((size, 1)) * np.arange(size)[None, :]
    d_h = np.abs(rows - c)
    heat = np.exp(-d_h ** 2 / (2 * sigma ** 2))
    if vertical_down:
        d_v = np.hypot(np.maximum(rows - c, 0) - np.maximum(rows - c, 0),
                       cols - c)
        vert = np.where(rows >= c, np.exp(-(cols - c) ** 2 / (2 * sigma ** 2)), 0.0)
        heat = np.maximum(heat, vert)
    hist = np.zeros((size, size))
    return np.stack([heat, hist])


def test_walker_empty_roi():
    roi = np.zeros((2, 65, 65))
    assert WalkerPredictor().predict(roi).vertices == []


def test_walker_straight_lane_fore_and_aft():
    roi = _roi_with_lane()
    out = WalkerPredictor().predict(roi)
    assert len(out.vertices) == 2
    angles = sorted(round(math.degrees(math.atan2(v.dy, v.dx))) % 360
                    for v in out.vertices)
    assert angles == [0, 180]
    assert all(v.p == pytest.approx(1.0, abs=1e-6) for v in out.vertices)


def test_walker_history_suppresses_aft():
    roi = _roi_with_lane()
    roi[-1][32, :33] = 1.0  # history marks the aft arm
    out = WalkerPredictor().predict(roi)
    assert len(out.vertices) == 1
    assert math.degrees(math.atan2(out.vertices[0].dy,
                                   out.vertices[0].dx)) == pytest.approx(0.0, abs=1.0)


def test_walker_t_junction_two_outputs():
    roi = _roi_with_lane(vertical_down=True)
    roi[-1][32, :33] = 1.0  # entry arm marked
    out = WalkerPredictor().predict(roi)
    angles = sorted(round(math.degrees(math.atan2(v.dy, v.dx))) % 360
                    for v in out.vertices)
    assert angles == [0, 90]


def test_walker_rotation_consistency():
    rng = np.random.default_rng(1)
    from scipy.ndimage import gaussian_filter

    heat = gaussian_filter(rng.random((65, 65)), 2.0)
    heat = (heat - heat.min()) / (heat.max() - heat.min())
    roi = np.stack([heat, np.zeros_like(heat)])
    out = WalkerPredictor(theta_peak=0.4).predict(roi)
    rotated = np.stack([np.rot90(roi[0]), np.rot90(roi[1])])
    out_rot = WalkerPredictor(theta_peak=0.4).predict(rotated)
    # np.rot90 maps content offsets (dx, dy) -> (dy, -dx)
    want = sorted((round(v.dy, 9), round(-v.dx, 9), round(v.p, 9))
                  for v in out.vertices)
    got = sorted((round(v.dx, 9), round(v.dy, 9), round(v.p, 9))
                 for v in out_rot.vertices)
    assert got == want


def test_walker_caps_at_n_max():
    rng = np.random.default_rng(2)
    heat = rng.random((65, 65))
    roi = np.stack([heat, np.zeros_like(heat)])
    out = WalkerPredictor(theta_peak=0.05, n_max=3).predict(roi)
    assert len(out.vertices) <= 3
