"""Next-vertex predictors behind one interface.

A predictor maps the agent's local view (the ROI tensor plus step context)
to candidate next vertices with validity probabilities. Three live here:

  * the ground-truth oracle, which walks the true graph forward from the
    agent's matched position (the expert used both for closed-loop sanity
    checks and for imitation-data labeling),
  * a learned-free heatmap walker that follows ridge maxima on a circle,
  * a client for external learned predictors (see :mod:`lanetrace.protocol`).

Vertex coordinates in a prediction are offsets from the ROI center pixel:
``dx`` along ego x (columns) and ``dy`` along ego y (rows), in pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fusion import sample_bilinear
from .geometry import point_segment_distance


class PredictorError(Exception):
    """A predictor failed to produce a usable output for one step.

    The tracer maps this to terminating the current instance, never the run.
    """


@dataclass(frozen=True)
class LabelConfig:
    """Expert labeling geometry, all in pixels of the BEV frame."""

    step_px: float = 8.0        # arc length walked per step
    match_radius_px: float = 6.0   # max distance from agent to the true graph
    coverage_radius_px: float = 3.0  # history test radius around probe points
    noise_px: float = 2.0       # uniform trajectory noise for expert sampling

    def __post_init__(self):
        if self.step_px <= 0:
            raise ValueError("step distance must be positive")
        if self.match_radius_px < 0 or self.coverage_radius_px < 0:
            raise ValueError("radii must be >= 0")


@dataclass(frozen=True)
class PredictedVertex:
    dx: float
    dy: float
    p: float


@dataclass
class PredictorOutput:
    """Up to N-hat candidate next vertices, ROI-center-relative."""

    vertices: list

    def valid(self, threshold):
        return [v for v in self.vertices if v.p >= threshold]

    def validate(self, half_size, n_max):
        if len(self.vertices) > n_max:
            raise ValueError(f"more than {n_max} predicted vertices")
        for v in self.vertices:
            if not (math.isfinite(v.p) and 0.0 <= v.p <= 1.0):
                raise ValueError(f"probability {v.p} outside [0, 1]")
            if not (math.isfinite(v.dx) and math.isfinite(v.dy)):
                raise ValueError("non-finite vertex coordinates")
            if abs(v.dx) > half_size or abs(v.dy) > half_size:
                raise ValueError("vertex outside the ROI bounds")
        return self


@dataclass
class StepContext:
    """What a predictor may know besides the ROI tensor itself."""

    v_t: np.ndarray          # (row, col) of the agent in the current frame
    pose: object             # EgoPose of the current frame
    spec: object             # GridSpec of the current frame
    history: np.ndarray      # full ego-frame history raster (bool)
    frame: int = 0
    step: int = 0


# ---------------------------------------------------------------------------
# Ground-truth labeling
# ---------------------------------------------------------------------------

def _covered(history, point, radius):
    """True when any history pixel within ``radius`` of ``point`` is marked."""
    h, w = history.shape
    r0 = max(0, int(math.floor(point[0] - radius)))
    r1 = min(h - 1, int(math.ceil(point[0] + radius)))
    c0 = max(0, int(math.floor(point[1] - radius)))
    c1 = min(w - 1, int(math.ceil(point[1] + radius)))
    if r0 > r1 or c0 > c1:
        return False
    window = history[r0:r1 + 1, c0:c1 + 1]
    if not window.any():
        return False
    rr, cc = np.nonzero(window)
    d = np.hypot(rr + r0 - point[0], cc + c0 - point[1])
    return bool((d <= radius).any())


_PROJECTION_CACHE = {}


def _edge_arrays(graph_px):
    key = id(graph_px)
    cached = _PROJECTION_CACHE.get(key)
    if cached is None or cached[0] is not graph_px:
        a = graph_px.vertices[graph_px.edges[:, 0]]
        b = graph_px.vertices[graph_px.edges[:, 1]]
        ab = b - a
        denom = np.maximum(ab[:, 0] ** 2 + ab[:, 1] ** 2, 1e-300)
        # hold a reference so id() cannot be recycled under us
        _PROJECTION_CACHE.clear()
        _PROJECTION_CACHE[key] = (graph_px, a, ab, denom)
        cached = _PROJECTION_CACHE[key]
    return cached[1], cached[2], cached[3]


def _project(graph_px, v_t):
    """Nearest point on the edge set: (distance, edge index, point)."""
    a, ab, denom = _edge_arrays(graph_px)
    p = np.asarray(v_t, dtype=float)
    t = np.clip(((p[0] - a[:, 0]) * ab[:, 0] + (p[1] - a[:, 1]) * ab[:, 1])
                / denom, 0.0, 1.0)
    px = a[:, 0] + t * ab[:, 0]
    py = a[:, 1] + t * ab[:, 1]
    d2 = (p[0] - px) ** 2 + (p[1] - py) ** 2
    k = int(np.argmin(d2))
    return float(math.sqrt(d2[k])), k, np.array([px[k], py[k]])


@dataclass
class WalkBranch:
    """One forward branch walk: its endpoint, the polyline traversed, and
    the (edge index, t0, t1) parameter intervals it consumed."""

    end: np.ndarray
    path: list
    intervals: list

    def arc_length(self):
        total = 0.0
        for a, b in zip(self.path[:-1], self.path[1:]):
            total += math.hypot(b[0] - a[0], b[1] - a[1])
        return total


def _walk_branches(graph_px, start_edge, start_point, step_px):
    """Walk forward along the directed graph from a point on an edge.

    One :class:`WalkBranch` per reachable branch: the walk accumulates arc
    length ``step_px``, passes through pass-through vertices, stops early at
    junction vertices (degree >= 3, emitting the junction itself) and at
    dead ends.
    """
    verts = graph_px.vertices
    degrees = graph_px.degrees()
    out_adj = graph_px.out_adjacency()
    edges = graph_px.edges
    min_step = max(2.0, 0.25 * step_px)

    s, d = edges[start_edge]
    start = np.asarray(start_point, dtype=float)
    results = []

    def edge_param(k, point):
        a = verts[edges[k][0]]
        b = verts[edges[k][1]]
        denom = float((b - a) @ (b - a))
        if denom == 0.0:
            return 0.0
        return float(((point - a) @ (b - a)) / denom)

    def advance(vertex, entry_path, walked, intervals):
        stack = [(vertex, entry_path, walked, intervals)]
        while stack:
            v, path, arc, ivs = stack.pop()
            if degrees[v] >= 3 and arc > 1e-9:
                # land exactly on junctions so branch topology stays crisp
                results.append(WalkBranch(verts[v].copy(), path, ivs))
                continue
            succ = out_adj[v]
            if not succ:
                # dead end: drop sub-pixel tail steps so instances terminate
                if arc >= min_step:
                    results.append(WalkBranch(verts[v].copy(), path, ivs))
                continue
            for nxt, k in succ:
                seg = verts[nxt] - verts[v]
                seg_len = math.hypot(seg[0], seg[1])
                remain = step_px - arc
                if seg_len >= remain:
                    end = verts[v] + seg * (remain / seg_len)
                    results.append(WalkBranch(
                        end, path + [end],
                        ivs + [(k, 0.0, remain / seg_len)]))
                else:
                    stack.append((nxt, path + [verts[nxt].copy()],
                                  arc + seg_len, ivs + [(k, 0.0, 1.0)]))

    # on-vertex start: branch over the vertex's outgoing edges
    if np.allclose(start, verts[d], atol=1e-9):
        advance(int(d), [verts[d].copy()], 0.0, [])
    elif np.allclose(start, verts[s], atol=1e-9):
        advance(int(s), [verts[s].copy()], 0.0, [])
    else:
        t0 = edge_param(start_edge, start)
        seg = verts[d] - start
        seg_len = math.hypot(seg[0], seg[1])
        if seg_len >= step_px:
            end = start + seg * (step_px / seg_len)
            t1 = edge_param(start_edge, end)
            results.append(WalkBranch(end, [start, end],
                                      [(start_edge, t0, t1)]))
        else:
            advance(int(d), [start, verts[d].copy()], seg_len,
                    [(start_edge, t0, 1.0)])
    return results


class ExplorationLog:
    """Arc-interval bookkeeping of which parts of the true graph have been
    walked. The binary history raster cannot tell a tangential lane split
    (or a mere crossing of another instance's trail) from a genuine
    re-trace, so the expert keeps exact per-edge intervals instead."""

    def __init__(self, graph_px):
        self._ivs = [[] for _ in range(graph_px.n_edges)]
        self._lengths = graph_px.edge_lengths()

    def mark(self, intervals):
        for k, t0, t1 in intervals:
            lo, hi = (t0, t1) if t0 <= t1 else (t1, t0)
            merged = []
            for a, b in self._ivs[k] + [(lo, hi)]:
                if merged and a <= merged[-1][1] + 1e-9:
                    merged[-1] = (merged[-1][0], max(merged[-1][1], b))
                else:
                    merged.append((a, b))
            self._ivs[k] = sorted(merged)

    def covered_fraction(self, intervals):
        """Fraction of the walked arc already marked as explored."""
        total = covered = 0.0
        for k, t0, t1 in intervals:
            lo, hi = (t0, t1) if t0 <= t1 else (t1, t0)
            span = (hi - lo) * self._lengths[k]
            total += span
            for a, b in self._ivs[k]:
                overlap = min(hi, b) - max(lo, a)
                if overlap > 0:
                    covered += overlap * self._lengths[k]
        return 1.0 if total <= 0 else covered / total


def label_next(v_t, graph_px, history, cfg=None, explored=None):
    """Label vertices for the next step given the true graph and history.

    The agent position projects onto the nearest graph point; each forward
    branch is walked for one step distance and branches that were already
    explored are discarded, encoding Stop/Move/Branch in the label count.

    With an :class:`ExplorationLog` the explored test is exact arc
    bookkeeping. Without one it falls back to the history raster: a branch
    is discarded only when the raster is marked at the matched position and
    along the whole walked path, so a stripe left by a crossing instance
    (which covers the path only in a band) never stops the agent.
    Returns label points in frame pixels (row, col); empty encodes Stop.
    """
    cfg = cfg or LabelConfig()
    branches = label_walks(v_t, graph_px, history, cfg, explored)
    return [b.end[::-1] for b in branches]  # back to (row, col)


def label_walks(v_t, graph_px, history, cfg=None, explored=None):
    """Like :func:`label_next` but returning the full walk branches."""
    cfg = cfg or LabelConfig()
    if graph_px.is_empty() or not len(graph_px.edges):
        return []
    v_rc = np.asarray(v_t, dtype=float)
    v_xy = v_rc[::-1]  # graph is (x=col, y=row) while v_t is (row, col)
    dist, edge, proj = _project(graph_px, v_xy)
    if dist > cfg.match_radius_px:
        return []
    at_u = _covered(history, proj[::-1], cfg.coverage_radius_px)
    out = []
    for branch in _walk_branches(graph_px, edge, proj, cfg.step_px):
        if explored is not None:
            if explored.covered_fraction(branch.intervals) >= 0.9:
                continue
        elif at_u and _path_covered(history, branch, cfg.coverage_radius_px):
            continue
        out.append(branch)
    return out


def _path_covered(history, branch, radius):
    arc = branch.arc_length()
    if arc <= 1.0:
        return _covered(history, branch.end[::-1], radius)
    for s in np.arange(1.0, arc + 0.5, 1.0):
        p = _point_at_arc(branch.path, min(s, arc))
        if not _covered(history, p[::-1], radius):
            return False
    return True


def _point_at_arc(path, arc):
    walked = 0.0
    for a, b in zip(path[:-1], path[1:]):
        seg = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        seg_len = math.hypot(seg[0], seg[1])
        if walked + seg_len >= arc and seg_len > 0:
            return np.asarray(a, dtype=float) + seg * ((arc - walked) / seg_len)
        walked += seg_len
    return np.asarray(path[-1], dtype=float)


class OraclePredictor:
    """Expert predictor that reads the true graph instead of the ROI.

    Labels map to ROI-center-relative offsets with probability 1; labels
    outside the ROI clamp to its boundary along the ray from the center.

    The oracle keeps an :class:`ExplorationLog` over the true graph. Since
    a predictor never learns whether its output was accepted, marking is
    deferred: a walked branch becomes explored once a later query arrives
    at (or near) its endpoint, which is exactly the acceptance signal. One
    oracle instance serves one trace run.
    """

    def __init__(self, gt_world, cfg=None, roi_size=64, n_max=8,
                 track_explored=True):
        self.gt_world = gt_world
        self.cfg = cfg or LabelConfig()
        self.roi_size = roi_size
        self.n_max = n_max
        self.track_explored = track_explored
        self.explored = None
        self._pending = []  # (end_world, intervals)
        self._cache_key = None
        self._gt_px = None

    def _graph_px(self, ctx):
        key = (id(ctx.pose), ctx.frame)
        if key != self._cache_key:
            from .geometry import world_to_ego

            spec = ctx.spec
            ego = world_to_ego(ctx.pose, self.gt_world.vertices) \
                if not self.gt_world.is_empty() else np.zeros((0, 2))
            xy = np.empty_like(ego)
            xy[:, 0] = spec.width / 2.0 + ego[:, 0] / spec.resolution
            xy[:, 1] = spec.height / 2.0 + ego[:, 1] / spec.resolution
            self._gt_px = self.gt_world.transformed(lambda v: xy)
            self._cache_key = key
        return self._gt_px

    def _world_of_px(self, ctx, rc):
        from .geometry import ego_to_world

        spec = ctx.spec
        ego = np.array([(rc[1] - spec.width / 2.0) * spec.resolution,
                        (rc[0] - spec.height / 2.0) * spec.resolution])
        return ego_to_world(ctx.pose, ego)

    def _consume_pending(self, ctx):
        """Mark the branch whose endpoint the agent actually stepped onto."""
        if not self._pending:
            return
        here = self._world_of_px(ctx, ctx.v_t)
        tol = (self.cfg.noise_px * 1.5 + 1.5) * ctx.spec.resolution
        best, best_d = -1, tol
        for i, (end_world, _) in enumerate(self._pending):
            d = math.hypot(end_world[0] - here[0], end_world[1] - here[1])
            if d <= best_d:
                best, best_d = i, d
        if best >= 0:
            _, intervals = self._pending.pop(best)
            self.explored.mark(intervals)
        if len(self._pending) > 4096:
            self._pending = self._pending[-2048:]

    def predict(self, roi, ctx):
        graph_px = self._graph_px(ctx)
        if self.track_explored:
            if self.explored is None:
                self.explored = ExplorationLog(graph_px)
            self._consume_pending(ctx)
        branches = label_walks(ctx.v_t, graph_px, ctx.history, self.cfg,
                               self.explored)
        center = np.round(ctx.v_t)
        half = self.roi_size / 2.0
        out = []
        for branch in branches[: self.n_max]:
            rc = branch.end[::-1]
            if self.track_explored:
                self._pending.append((self._world_of_px(ctx, rc),
                                      branch.intervals))
            dy = rc[0] - center[0]
            dx = rc[1] - center[1]
            radius = max(abs(dx), abs(dy))
            if radius > half:  # clamp along the ray from the center
                scale = half / radius
                dx *= scale
                dy *= scale
            out.append(PredictedVertex(dx, dy, 1.0))
        return PredictorOutput(out)

    def close(self):
        pass


class HeatmapGatedOracle:
    """Expert labels gated by observed heatmap support.

    Wraps :class:`OraclePredictor` and drops any label whose surrounding
    heatmap evidence (channel 0 of the ROI) is missing, so degraded input
    degrades the expert the way it would degrade a trained predictor: the
    agent stops inside dropout holes and recovers through endpoint
    propagation and fresh initial-vertex peaks, but it never hallucinates
    geometry the raster does not support.
    """

    def __init__(self, gt_world, cfg=None, roi_size=64, n_max=8,
                 support_threshold=0.2, heat_channel=0):
        self.oracle = OraclePredictor(gt_world, cfg, roi_size, n_max)
        self.support_threshold = support_threshold
        self.heat_channel = heat_channel

    def predict(self, roi, ctx):
        out = self.oracle.predict(roi, ctx)
        half = roi.shape[-1] // 2
        heat = roi[self.heat_channel]
        kept = []
        for v in out.vertices:
            r = min(max(int(round(half + v.dy)), 0), heat.shape[0] - 1)
            c = min(max(int(round(half + v.dx)), 0), heat.shape[1] - 1)
            window = heat[max(0, r - 1):r + 2, max(0, c - 1):c + 2]
            if window.max() >= self.support_threshold:
                kept.append(v)
        return PredictorOutput(kept)

    def close(self):
        self.oracle.close()


# ---------------------------------------------------------------------------
# Heatmap walker
# ---------------------------------------------------------------------------

class WalkerPredictor:
    """Deterministic ridge follower on the heatmap channel.

    Samples the heatmap on a circle around the ROI center, suppresses
    angular windows around history-marked directions, and emits the angular
    local maxima as next vertices with the heatmap value as probability.
    """

    def __init__(self, step_px=8.0, theta_peak=0.3, n_max=8,
                 suppress_deg=25, heat_channel=0):
        self.step_px = step_px
        self.theta_peak = theta_peak
        self.n_max = n_max
        self.suppress_deg = suppress_deg
        self.heat_channel = heat_channel

    def predict(self, roi, ctx=None):
        heat = roi[self.heat_channel]
        history = roi[-1]
        size = heat.shape[0]
        cy = cx = size // 2
        ang = np.deg2rad(np.arange(360.0))
        rows = cy + self.step_px * np.sin(ang)
        cols = cx + self.step_px * np.cos(ang)
        values, _ = sample_bilinear(heat, rows, cols)
        hist, _ = sample_bilinear(history, rows, cols)
        marked = hist > 0.05
        if marked.any():
            k = int(self.suppress_deg)
            idx = np.flatnonzero(marked)
            suppressed = np.zeros(360, dtype=bool)
            for i in idx:
                lo = i - k
                for j in range(lo, i + k + 1):
                    suppressed[j % 360] = True
        else:
            suppressed = np.zeros(360, dtype=bool)
        left = np.roll(values, 1)
        right = np.roll(values, -1)
        is_max = (values >= self.theta_peak) & (values > left) & \
                 (values >= right) & ~suppressed
        candidates = sorted(
            np.flatnonzero(is_max), key=lambda i: (-values[i], i)
        )[: self.n_max]
        out = [
            PredictedVertex(
                self.step_px * math.cos(ang[i]),
                self.step_px * math.sin(ang[i]),
                float(values[i]),
            )
            for i in candidates
        ]
        return PredictorOutput(out)

    def close(self):
        pass
