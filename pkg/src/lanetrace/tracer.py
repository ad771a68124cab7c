"""The iterative tracing agent.

Per frame, the agent seeds a candidate stack from initial-vertex heatmap
peaks and from the previous frame's endpoints, then repeatedly crops a
local ROI around its current vertex, asks a predictor for next vertices,
and acts on the count of valid predictions: none ends the instance (the
position becomes a next-frame candidate), one extends the trajectory, and
several spawn branch candidates. The trajectory graph lives in the world
frame; an ego-frame binary rendering of it is re-derived per frame (and
updated per step) as the history channel the predictor sees.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .fusion import FusionConfig, fuse_window
from .geometry import GraphBuilder, ego_to_world, world_to_ego
from .predictors import PredictorError, StepContext

# merging near-duplicate vertices requires nearly parallel local tangents:
# genuine re-traces run along the same lane while distinct instances cross
# at wider angles and must never weld together
ALIGN_DEG = 20.0


@dataclass(frozen=True)
class AgentConfig:
    roi_size: int = 64            # square ROI side, pixels
    n_max: int = 8                # vertex query budget per step
    theta_valid: float = 0.5      # probability threshold for accepting a vertex
    theta_peak: float = 0.3       # initial-vertex heatmap peak threshold
    nms_radius_px: float = 8.0    # peak suppression radius
    dedup_radius_m: float = 1.0   # candidate-vs-trajectory exclusion radius
    max_steps_instance: int = 500
    max_steps_frame: int = 5000
    history_width_px: float = 1.0
    merge_snap_m: float = 0.5     # landing snap onto aligned existing vertices
    move_noise_px: float = 0.0    # uniform trajectory noise (expert sampling)
    pop_random: bool = False      # pop candidates in seeded random order

    def __post_init__(self):
        if self.roi_size % 2:
            raise ValueError("ROI size must be even")
        if not (0.0 < self.theta_valid < 1.0 and 0.0 < self.theta_peak < 1.0):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.n_max < 1:
            raise ValueError("need at least one vertex query")


@dataclass
class Candidate:
    point_world: np.ndarray
    provenance: str  # 'peak' | 'endpoint' | 'branch'


@dataclass
class StepRecord:
    """One predictor interaction, as seen by observers (expert sampling)."""

    frame: int
    step: int
    v_t_px: np.ndarray
    v_t_world: np.ndarray
    roi: np.ndarray
    output: object
    action: str                  # 'stop' | 'move' | 'branch' | 'error'
    accepted: list = field(default_factory=list)


@dataclass
class TraceResult:
    graph: object
    diagnostics: dict


def nms_peaks(heatmap, threshold, radius):
    """Greedy non-maximum suppression of local maxima above a threshold.

    Returns peak pixel coordinates (row, col) in descending value order;
    ties break in row-major order for determinism.
    """
    local_max = heatmap == maximum_filter(heatmap, size=3, mode="constant")
    cand = np.argwhere(local_max & (heatmap >= threshold))
    if not len(cand):
        return np.zeros((0, 2))
    values = heatmap[cand[:, 0], cand[:, 1]]
    order = np.lexsort((cand[:, 1], cand[:, 0], -values))
    cand = cand[order]
    kept = []
    for p in cand:
        if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= radius ** 2
               for q in kept):
            kept.append(p)
    return np.array(kept, dtype=float)


def draw_history_segment(mask, a_rc, b_rc, width):
    """Mark pixels within width/2 of the segment a-b (row/col coords)."""
    h, w = mask.shape
    half = width / 2.0
    r0 = max(0, int(math.floor(min(a_rc[0], b_rc[0]) - half - 1)))
    r1 = min(h - 1, int(math.ceil(max(a_rc[0], b_rc[0]) + half + 1)))
    c0 = max(0, int(math.floor(min(a_rc[1], b_rc[1]) - half - 1)))
    c1 = min(w - 1, int(math.ceil(max(a_rc[1], b_rc[1]) + half + 1)))
    if r0 > r1 or c0 > c1:
        return
    rr, cc = np.meshgrid(np.arange(r0, r1 + 1, dtype=float),
                         np.arange(c0, c1 + 1, dtype=float), indexing="ij")
    ab = np.asarray(b_rc, dtype=float) - np.asarray(a_rc, dtype=float)
    denom = float(ab[0] ** 2 + ab[1] ** 2)
    if denom == 0.0:
        d = np.hypot(rr - a_rc[0], cc - a_rc[1])
    else:
        t = np.clip(((rr - a_rc[0]) * ab[0] + (cc - a_rc[1]) * ab[1]) / denom,
                    0.0, 1.0)
        d = np.hypot(rr - (a_rc[0] + t * ab[0]), cc - (a_rc[1] + t * ab[1]))
    mask[r0:r1 + 1, c0:c1 + 1] |= d <= half


def crop_roi(channels, history, v_px, roi_size):
    """Square crop of the fused channels plus the history channel.

    Centered on the rounded agent position; zero-padded where the crop
    leaves the grid. Raises when the center itself is out of the grid.
    """
    h, w = history.shape
    r_c = int(round(v_px[0]))
    c_c = int(round(v_px[1]))
    if not (0 <= v_px[0] <= h - 1 and 0 <= v_px[1] <= w - 1):
        raise ValueError("ROI center outside the grid")
    half = roi_size // 2
    n_ch = channels.shape[0] + 1
    roi = np.zeros((n_ch, roi_size, roi_size), dtype=np.float32)
    r0, r1 = r_c - half, r_c - half + roi_size
    c0, c1 = c_c - half, c_c - half + roi_size
    sr0, sr1 = max(r0, 0), min(r1, h)
    sc0, sc1 = max(c0, 0), min(c1, w)
    dr0, dc0 = sr0 - r0, sc0 - c0
    roi[:-1, dr0:dr0 + sr1 - sr0, dc0:dc0 + sc1 - sc0] = \
        channels[:, sr0:sr1, sc0:sc1]
    roi[-1, dr0:dr0 + sr1 - sr0, dc0:dc0 + sc1 - sc0] = \
        history[sr0:sr1, sc0:sc1]
    return roi


def _pixel_of(pose, spec, world_pt):
    ego = world_to_ego(pose, world_pt)
    return np.array([spec.height / 2.0 + ego[1] / spec.resolution,
                     spec.width / 2.0 + ego[0] / spec.resolution])


def _world_of(pose, spec, px_rc):
    ego = np.array([(px_rc[1] - spec.width / 2.0) * spec.resolution,
                    (px_rc[0] - spec.height / 2.0) * spec.resolution])
    return ego_to_world(pose, ego)


def _inside(px_rc, spec):
    return (0.0 <= px_rc[0] <= spec.height - 1
            and 0.0 <= px_rc[1] <= spec.width - 1)


def init_candidates(hi, pose, spec, prev_endpoints, builder, cfg):
    """Seed the frame's candidate stack.

    Heatmap peaks that fall within the dedup radius of an already-traced
    vertex are dropped (they would re-trace known geometry); endpoint
    candidates are exempt since they are continuation anchors and sit on
    the trajectory by construction. Endpoints are pushed last so the LIFO
    pop prioritizes cross-frame continuation.
    """
    stack = []
    for rc in nms_peaks(hi, cfg.theta_peak, cfg.nms_radius_px):
        p = _world_of(pose, spec, rc)
        _, dist = builder.nearest(p)
        if dist >= cfg.dedup_radius_m:
            stack.append(Candidate(p, "peak"))
    for p in prev_endpoints:
        stack.append(Candidate(np.asarray(p, dtype=float), "endpoint"))
    return stack


class Tracer:
    """Drives a predictor over a frame sequence and assembles the graph."""

    def __init__(self, predictor, cfg=None, fusion=None, seed=0,
                 observer=None):
        self.predictor = predictor
        self.cfg = cfg or AgentConfig()
        self.fusion = fusion or FusionConfig()
        self.rng = np.random.default_rng(seed)
        self.observer = observer
        self.builder = GraphBuilder()
        self.instance_id = 0
        self.diagnostics = {"frames": [], "totals": {
            "steps": 0, "moves": 0, "stops": 0, "branches": 0,
            "predictor_errors": 0, "budget_hits": 0, "skipped_pops": 0}}

    # -- graph update -------------------------------------------------------

    def _landing_vertex(self, source_index, to_world):
        """Vertex index for a landing point, snapping onto an existing
        vertex when it is near, its incident edges run the same way (so
        crossings of another instance never weld together), and it is not a
        sibling branch out of the same junction."""
        b = self.builder
        idx, dist = b.nearest(to_world)
        if dist < b.merge_radius:
            return idx
        if dist < self.cfg.merge_snap_m:
            siblings = any(j == source_index for j, _ in b.adjacency[idx])
            d = np.asarray(to_world, dtype=float) - b.vertices_array()[source_index]
            norm = math.hypot(d[0], d[1])
            if norm > 0 and not siblings:
                d = d / norm
                for u in b.vertex_directions(idx):
                    if abs(float(d @ u)) >= math.cos(math.radians(ALIGN_DEG)):
                        return idx
        return b.add_vertex(to_world, self.instance_id)

    def _accept_move(self, state, target_px, pose, spec):
        """Noise the accepted vertex, extend the graph, update history.

        Returns the landed (pixel, world) pair; after a snap onto an
        existing vertex the agent stands exactly on that vertex, keeping
        the two representations consistent.
        """
        if self.cfg.move_noise_px > 0:
            target_px = target_px + self.rng.uniform(
                -self.cfg.move_noise_px, self.cfg.move_noise_px, size=2)
        target_world = _world_of(pose, spec, target_px)
        i = self.builder.add_vertex(state["v_world"], self.instance_id)
        j = self._landing_vertex(i, target_world)
        self.builder.add_edge(i, j)
        landed_world = self.builder.vertices_array()[j].copy()
        landed_px = _pixel_of(pose, spec, landed_world)
        draw_history_segment(state["history"], state["v_px"], landed_px,
                             self.cfg.history_width_px)
        return landed_px, landed_world

    # -- per-frame loop -----------------------------------------------------

    def _pop(self, stack):
        if self.cfg.pop_random:
            k = int(self.rng.integers(0, len(stack)))
            return stack.pop(k)
        return stack.pop()

    def trace_frame(self, frames, index, prev_endpoints):
        cfg = self.cfg
        frame = frames[index]
        pose, spec = frame.pose, frame.spec
        fused, _ = fuse_window(frames, index, self.fusion)
        channels = fused.features
        history = np.zeros((spec.height, spec.width), dtype=bool)
        verts = self.builder.vertices_array()
        if len(verts):
            px = np.empty_like(verts)
            ego = world_to_ego(pose, verts)
            px[:, 0] = spec.height / 2.0 + ego[:, 1] / spec.resolution
            px[:, 1] = spec.width / 2.0 + ego[:, 0] / spec.resolution
            for s, d in self.builder.edges:
                draw_history_segment(history, px[s], px[d],
                                     cfg.history_width_px)
        stack = init_candidates(frame.hi, pose, spec, prev_endpoints,
                                self.builder, cfg)
        stats = {"frame": index, "candidates": len(stack), "steps": 0,
                 "moves": 0, "stops": 0, "branches": 0, "endpoints": 0,
                 "boundary_stops": 0, "carried_endpoints": 0,
                 "predictor_errors": 0, "budget_hit": False,
                 "skipped_pops": 0}
        endpoints_out = []
        frame_steps = 0
        t0 = time.perf_counter()
        while stack:
            if frame_steps >= cfg.max_steps_frame:
                stats["budget_hit"] = True
                self.diagnostics["totals"]["budget_hits"] += 1
                break
            cand = self._pop(stack)
            if cand.provenance == "peak":
                _, dist = self.builder.nearest(cand.point_world)
                if dist < cfg.dedup_radius_m:
                    stats["skipped_pops"] += 1
                    continue
            v_px = _pixel_of(pose, spec, cand.point_world)
            if not _inside(v_px, spec):
                if cand.provenance == "endpoint":
                    endpoints_out.append(cand.point_world)  # still pending
                    stats["carried_endpoints"] += 1
                stats["skipped_pops"] += 1
                continue
            self.instance_id += 1
            state = {"v_px": v_px, "v_world": cand.point_world.copy(),
                     "history": history}
            instance_steps = 0
            instance_moves = 0
            while True:
                if (instance_steps >= cfg.max_steps_instance
                        or frame_steps >= cfg.max_steps_frame):
                    stats["budget_hit"] = True
                    self.diagnostics["totals"]["budget_hits"] += 1
                    break
                if not _inside(state["v_px"], spec):
                    # trajectory noise can push an accepted vertex past the
                    # boundary; continue from it next frame
                    endpoints_out.append(state["v_world"].copy())
                    stats["boundary_stops"] += 1
                    break
                roi = crop_roi(channels, history, state["v_px"], cfg.roi_size)
                ctx = StepContext(v_t=state["v_px"], pose=pose, spec=spec,
                                  history=history, frame=index,
                                  step=frame_steps)
                frame_steps += 1
                instance_steps += 1
                stats["steps"] += 1
                try:
                    output = self.predictor.predict(roi, ctx)
                    output.validate(cfg.roi_size / 2.0, cfg.n_max)
                except (PredictorError, ValueError) as exc:
                    stats["predictor_errors"] += 1
                    self.diagnostics["totals"]["predictor_errors"] += 1
                    self._observe(StepRecord(index, frame_steps,
                                             state["v_px"].copy(),
                                             state["v_world"].copy(), roi,
                                             exc, "error"))
                    break
                valid = output.valid(cfg.theta_valid)
                center = np.round(state["v_px"])
                if not valid:
                    # a propagated endpoint that produced no growth is
                    # consumed here, otherwise it would bounce forever
                    if not (cand.provenance == "endpoint"
                            and instance_moves == 0):
                        endpoints_out.append(state["v_world"].copy())
                        stats["stops"] += 1
                    self._observe(StepRecord(index, frame_steps,
                                             state["v_px"].copy(),
                                             state["v_world"].copy(), roi,
                                             output, "stop"))
                    break
                if len(valid) == 1:
                    v = valid[0]
                    target = center + np.array([v.dy, v.dx])
                    self._observe(StepRecord(index, frame_steps,
                                             state["v_px"].copy(),
                                             state["v_world"].copy(), roi,
                                             output, "move", [(v.dx, v.dy)]))
                    if not _inside(target, spec):
                        endpoints_out.append(state["v_world"].copy())
                        stats["boundary_stops"] += 1
                        break
                    new_px, new_world = self._accept_move(state, target,
                                                          pose, spec)
                    state["v_px"] = new_px
                    state["v_world"] = new_world
                    stats["moves"] += 1
                    instance_moves += 1
                    continue
                # N > 1: record the junction edges, queue the branches,
                # and end this instance
                accepted = []
                for v in valid:
                    target = center + np.array([v.dy, v.dx])
                    accepted.append((v.dx, v.dy))
                    if not _inside(target, spec):
                        endpoints_out.append(state["v_world"].copy())
                        stats["boundary_stops"] += 1
                        continue
                    saved = state["v_px"]
                    new_px, new_world = self._accept_move(state, target,
                                                          pose, spec)
                    state["v_px"] = saved  # all branches leave from v_t
                    stack.append(Candidate(new_world, "branch"))
                stats["branches"] += 1
                self._observe(StepRecord(index, frame_steps,
                                         state["v_px"].copy(),
                                         state["v_world"].copy(), roi,
                                         output, "branch", accepted))
                break
        stats["endpoints"] = len(endpoints_out)
        stats["elapsed_s"] = time.perf_counter() - t0
        for key in ("steps", "moves", "stops", "branches"):
            self.diagnostics["totals"][key] += stats[key]
        self.diagnostics["totals"]["skipped_pops"] += stats["skipped_pops"]
        self.diagnostics["frames"].append(stats)
        return endpoints_out

    def _observe(self, record):
        if self.observer is not None:
            self.observer(record)

    def run(self, frames):
        if not frames:
            raise ValueError("need at least one frame")
        endpoints = []
        for index in range(len(frames)):
            endpoints = self.trace_frame(frames, index, endpoints)
        graph = finalize_graph(self.builder, self.cfg)
        return TraceResult(graph, self.diagnostics)


def trace_sequence(frames, predictor, cfg=None, fusion=None, seed=0,
                   observer=None):
    """Trace a frame sequence into a world centerline graph."""
    tracer = Tracer(predictor, cfg, fusion, seed, observer)
    return tracer.run(frames)


# ---------------------------------------------------------------------------
# Final graph clean-up
# ---------------------------------------------------------------------------

def finalize_graph(builder, cfg=None):
    """Merge residual near-duplicate vertices and prune one-step spurs.

    Merging is direction-aware: only vertices whose incident edges run
    within 45 degrees of each other collapse, so geometrically crossing
    instances keep their independent topology.
    """
    from scipy.spatial import cKDTree

    from .geometry import CenterlineGraph

    cfg = cfg or AgentConfig()
    verts = builder.vertices_array().copy()
    tags = builder.tags_array().copy()
    edges = list(builder.edges)
    n = len(verts)
    if n == 0:
        return CenterlineGraph()

    dirs = [builder.vertex_directions(i) for i in range(n)]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    cos_align = math.cos(math.radians(ALIGN_DEG))
    neighbor_sets = [set(j for j, _ in builder.adjacency[i]) for i in range(n)]
    for i, j in sorted(cKDTree(verts).query_pairs(cfg.dedup_radius_m)):
        if not dirs[i] or not dirs[j]:
            continue
        # sibling branches out of one junction stay distinct
        if neighbor_sets[i] & neighbor_sets[j] or j in neighbor_sets[i]:
            continue
        aligned = any(abs(float(u @ v)) >= cos_align
                      for u in dirs[i] for v in dirs[j])
        if aligned:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    roots = [find(i) for i in range(n)]
    remap = {}
    new_verts = []
    new_tags = []
    for i, r in enumerate(roots):
        if r not in remap:
            remap[r] = len(new_verts)
            new_verts.append(verts[r])
            new_tags.append(tags[r])
    edge_set = set()
    for s, d in edges:
        a, b = remap[roots[s]], remap[roots[d]]
        if a != b:
            edge_set.add((a, b))
    new_edges = sorted(edge_set)

    # prune dangling chains shorter than two steps
    adj = {}
    for s, d in new_edges:
        adj.setdefault(s, set()).add(d)
        adj.setdefault(d, set()).add(s)
    degree = {v: len(nb) for v, nb in adj.items()}
    drop = set()
    for s, d in new_edges:
        for leaf, other in ((s, d), (d, s)):
            if degree.get(leaf, 0) == 1 and degree.get(other, 0) != 2:
                drop.add((s, d))
    new_edges = [e for e in new_edges if e not in drop]

    used = sorted({v for e in new_edges for v in e})
    if not used:
        return CenterlineGraph()
    final_map = {v: k for k, v in enumerate(used)}
    final_edges = [(final_map[s], final_map[d]) for s, d in new_edges]
    return CenterlineGraph(np.array([new_verts[v] for v in used]),
                           final_edges,
                           np.array([new_tags[v] for v in used]),
                           validate=False)
