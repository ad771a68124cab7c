"""Synthetic scene generation and BEV rasterization.

Stands in for the upstream perception stage: produces ground-truth
centerline graphs, ego pose sequences, and per-frame ego-aligned rasters
(centerline heatmap, initial-vertex heatmap, feature channels) with a
configurable degradation model. Everything is a pure function of
(config, seed); per-frame noise streams are spawned from the scene seed so
frames can be rasterized in any order or in parallel.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    CenterlineGraph,
    EgoPose,
    GraphBuilder,
    GridSpec,
    ego_to_world,
    world_to_ego,
)

SCENE_KINDS = ("straight", "curve", "split_merge", "four_way", "random")


@dataclass(frozen=True)
class NoiseConfig:
    """Raster degradation model.

    ``falloff_sigma`` shapes the centerline heatmap itself (Gaussian falloff
    from the line, in pixels); ``bump_sigma`` shapes initial-vertex bumps.
    ``amplitude`` adds per-pixel uniform noise in [-amplitude, +amplitude]
    and ``dropout`` zeroes square patches of ``patch_px`` pixels with the
    given probability (the same patches across all channels of a frame).
    """

    falloff_sigma: float = 1.5
    bump_sigma: float = 2.0
    amplitude: float = 0.0
    dropout: float = 0.0
    patch_px: int = 16

    def __post_init__(self):
        if not (0.0 <= self.amplitude <= 1.0 and 0.0 <= self.dropout <= 1.0):
            raise ValueError("noise amplitudes must lie in [0, 1]")
        if self.falloff_sigma <= 0 or self.bump_sigma <= 0:
            raise ValueError("sigmas must be positive")


@dataclass(frozen=True)
class SceneConfig:
    kind: str = "straight"
    lanes: int = 1                 # lanes per road (per direction for four_way)
    lane_spacing: float = 3.5      # m
    extent: float = 78.0           # m, length of the road the ego follows
    speed: float = 2.0             # m per frame
    frames: int = 40
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    ego_jitter: float = 0.0        # m, bounded lateral deviation of the ego
    turn_connectors: str = "all"   # four_way turns: all | partial | none
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.frames < 1:
            raise ValueError("frame count must be >= 1")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.lanes < 1:
            raise ValueError("need at least one lane")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.turn_connectors not in ("all", "partial", "none"):
            raise ValueError("turn_connectors must be all, partial or none")


@dataclass
class BevGrid:
    """One ego-aligned BEV frame: heatmaps plus feature channels.

    ``hl`` is the centerline heatmap, ``hi`` the initial-vertex heatmap,
    ``features`` a (K, H, W) stack (by default the centerline heatmap plus a
    local-direction channel with angles encoded into [0, 1]).
    """

    spec: GridSpec
    pose: EgoPose
    hl: np.ndarray
    hi: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        shape = (self.spec.height, self.spec.width)
        if self.hl.shape != shape or self.hi.shape != shape:
            raise ValueError("heatmap shape does not match grid spec")
        if self.features.ndim != 3 or self.features.shape[1:] != shape:
            raise ValueError("feature stack shape does not match grid spec")
        for arr in (self.hl, self.hi):
            if not np.all(np.isfinite(arr)):
                raise ValueError("raster values must be finite")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError("heatmap values must lie in [0, 1]")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("raster values must be finite")

    def channel_stack(self):
        """All channels as one (2 + K, H, W) float array (hl, hi, features)."""
        return np.concatenate([self.hl[None], self.hi[None], self.features])

    @staticmethod
    def from_stack(stack, spec, pose):
        return BevGrid(spec, pose, hl=stack[0], hi=stack[1],
                       features=stack[2:].copy())


@dataclass
class Scene:
    """Ground truth graph (world frame), ego pose per frame, and its config."""

    graph: CenterlineGraph
    poses: list
    config: SceneConfig


# ---------------------------------------------------------------------------
# Lane construction helpers
# ---------------------------------------------------------------------------

def _sample_polyline(points, step=1.0):
    """Densify a polyline so no segment exceeds ``step``; keeps breakpoints."""
    pts = [np.asarray(points[0], dtype=float)]
    for a, b in zip(points[:-1], points[1:]):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        length = math.hypot(*(b - a))
        pieces = max(1, int(math.ceil(length / step - 1e-9)))
        for i in range(1, pieces + 1):
            pts.append(a + (b - a) * (i / pieces))
    return np.array(pts)


def _arc_points(center, radius, theta0, theta1, step=1.0):
    """Polyline along a circular arc, sampled at ~step arc length."""
    sweep = theta1 - theta0
    n = max(2, int(math.ceil(abs(sweep) * radius / step)) + 1)
    theta = np.linspace(theta0, theta1, n)
    return np.stack([center[0] + radius * np.cos(theta),
                     center[1] + radius * np.sin(theta)], axis=1)


def _assemble(lanes):
    """Build a graph from [(polyline, tag), ...]; shared points merge."""
    b = GraphBuilder()
    for pts, tag in lanes:
        prev = b.add_vertex(pts[0], tag)
        for p in pts[1:]:
            cur = b.add_vertex(p, tag)
            b.add_edge(prev, cur)
            prev = cur
    return b.build()


def _poses_along(points, speed, frames, jitter=0.0, phase=0.0):
    """Ego poses marching along a polyline at fixed arc-length increments."""
    pts = np.asarray(points, dtype=float)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    poses = []
    for t in range(frames):
        s = min(t * speed, total)
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(seg_len) - 1)
        u = 0.0 if seg_len[i] == 0 else (s - cum[i]) / seg_len[i]
        p = pts[i] + u * seg[i]
        yaw = math.atan2(seg[i][1], seg[i][0])
        if jitter:
            off = jitter * math.sin(2.0 * math.pi * t / 12.0 + phase)
            p = p + off * np.array([-math.sin(yaw), math.cos(yaw)])
        poses.append(EgoPose(p[0], p[1], yaw))
    return poses


def _lateral_offsets(k, spacing):
    """Stagger k same-direction lanes around the ego lane: 0, +s, -s, +2s..."""
    offs = [0.0]
    for j in range(1, k):
        m = (j + 1) // 2
        offs.append(spacing * m if j % 2 else -spacing * m)
    return offs


def _straight_scene(cfg):
    L = cfg.extent
    lanes = []
    for tag, off in enumerate(_lateral_offsets(cfg.lanes, cfg.lane_spacing)):
        pts = _sample_polyline([(0.0, off), (L, off)])
        lanes.append((pts, tag))
    return lanes, lanes[0][0]


def _curve_scene(cfg, rng=None):
    L = cfg.extent
    radius = max(40.0, L / 1.2)
    sign = 1.0
    if rng is not None:
        radius = float(rng.uniform(max(40.0, L / 1.4), max(60.0, L / 0.9)))
        sign = 1.0 if rng.random() < 0.5 else -1.0
    phi = L / radius
    center = (0.0, sign * radius)
    lanes = []
    for tag, off in enumerate(_lateral_offsets(cfg.lanes, cfg.lane_spacing)):
        r = radius - sign * off
        if sign > 0:
            pts = _arc_points(center, r, -math.pi / 2, -math.pi / 2 + phi)
        else:
            pts = _arc_points(center, r, math.pi / 2, math.pi / 2 - phi)
        lanes.append((pts, tag))
    return lanes, lanes[0][0]


def _split_merge_scene(cfg, rng=None):
    L = cfg.extent
    ls = cfg.lane_spacing
    ramp = 12.0
    s0, s1 = 0.35, 0.75
    if rng is not None:
        s0 = float(rng.uniform(0.25, 0.4))
        s1 = float(rng.uniform(0.6, 0.8))
    xs, xm = s0 * L, s1 * L
    if xm - xs < 2 * ramp + 4:
        raise ValueError("extent too small for a split/merge pair")
    main = _sample_polyline([(0.0, 0.0), (xs, 0.0), (xm, 0.0), (L, 0.0)])
    # smooth lateral ease-out/ease-in for the branch
    u = np.linspace(0.0, 1.0, 14)
    ease = 3 * u ** 2 - 2 * u ** 3
    out = np.stack([xs + u * ramp, ls * ease], axis=1)
    back = np.stack([xm - ramp + u * ramp, ls * (1.0 - ease)], axis=1)
    mid = np.stack([np.linspace(xs + ramp, xm - ramp, 8), np.full(8, ls)], axis=1)
    branch = _sample_polyline(np.vstack([out, mid[1:-1], back]))
    lanes = [(main, 0), (branch, 1)]
    for j in range(1, cfg.lanes):
        off = -cfg.lane_spacing * j
        lanes.append((_sample_polyline([(0.0, off), (L, off)]), 1 + j))
    return lanes, main


_TURN_SAMPLES = 14


def _four_way_scene(cfg, rng=None):
    L = cfg.extent
    ls = cfg.lane_spacing
    h = ls / 2.0
    box = cfg.lanes * ls + 2.0
    arm = 18.0
    if rng is not None:
        arm = float(rng.uniform(14.0, 20.0))
    if L < 2 * box + 10:
        raise ValueError("extent too small for a four-way intersection")
    cx = L / 2.0
    center = np.array([cx, 0.0])

    def rot(phi, p):
        c, s = math.cos(phi), math.sin(phi)
        p = np.atleast_2d(p)
        return np.stack([c * p[:, 0] - s * p[:, 1],
                         s * p[:, 0] + c * p[:, 1]], axis=1)

    headings = [0.0, math.pi / 2, math.pi, -math.pi / 2]  # E, N, W, S
    pre_post = [(cx, L - cx), (arm, arm), (L - cx, cx), (arm, arm)]
    lanes = []
    tag = 0
    ego_pts = None
    for d, (phi, (pre, post)) in enumerate(zip(headings, pre_post)):
        # inner lane with breakpoints at the intersection box boundary
        local = [(-pre, -h), (-box, -h), (box, -h), (post, -h)]
        pts = _sample_polyline(center + rot(phi, np.array(local, dtype=float)))
        lanes.append((pts, tag))
        if d == 0:
            ego_pts = pts
        tag += 1
        for j in range(1, cfg.lanes):
            off = -h - j * ls
            pts_j = _sample_polyline(center + rot(
                phi, np.array([(-pre, off), (post, off)], dtype=float)))
            lanes.append((pts_j, tag))
            tag += 1
        # connectivity of the crossing: overlapping through-lanes are always
        # present, turn arcs depend on the configuration (a sparser set
        # leaves instance pairs that overlap without being connected)
        if cfg.turn_connectors == "none":
            continue
        if cfg.turn_connectors == "partial" and d % 2 == 1:
            continue
        # right turn: quarter arc onto the clockwise neighbor's inner lane
        right = _arc_points((-box, -box), box - h, math.pi / 2, 0.0)
        lanes.append((center + rot(phi, right), tag))
        tag += 1
        # left turn: wider quarter arc onto the counter-clockwise neighbor
        left = _arc_points((-box, box), box + h, -math.pi / 2, 0.0)
        lanes.append((center + rot(phi, left), tag))
        tag += 1
    return lanes, ego_pts


def generate_scene(config):
    """Build the ground-truth graph and ego trajectory for a scene config.

    Deterministic for a fixed config (the seed covers every random choice,
    including the composite kind and the ego jitter phase).
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    kind = config.kind
    transform = None
    if kind == "random":
        kind = ("straight", "curve", "split_merge", "four_way")[
            int(rng.integers(0, 4))]
        transform = EgoPose(float(rng.uniform(-30, 30)),
                            float(rng.uniform(-30, 30)),
                            float(rng.uniform(-math.pi, math.pi)))
    if kind == "straight":
        lanes, ego_pts = _straight_scene(config)
    elif kind == "curve":
        lanes, ego_pts = _curve_scene(config, rng if config.kind == "random" else None)
    elif kind == "split_merge":
        lanes, ego_pts = _split_merge_scene(config, rng if config.kind == "random" else None)
    else:
        lanes, ego_pts = _four_way_scene(config, rng if config.kind == "random" else None)

    if transform is not None:
        lanes = [(ego_to_world(transform, pts), tag) for pts, tag in lanes]
        ego_pts = ego_to_world(transform, ego_pts)

    graph = _assemble(lanes)
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    poses = _poses_along(ego_pts, config.speed, config.frames,
                         jitter=config.ego_jitter, phase=phase)
    return Scene(graph, poses, config)


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def _segment_window_update(dist, aux, a, b, radius, aux_value):
    """Update a running min-distance field within the segment's window.

    ``aux`` (same shape) receives ``aux_value`` where the distance improved.
    """
    h, w = dist.shape
    r0 = int(math.floor(min(a[0], b[0]) - radius))
    r1 = int(math.ceil(max(a[0], b[0]) + radius))
    c0 = int(math.floor(min(a[1], b[1]) - radius))
    c1 = int(math.ceil(max(a[1], b[1]) + radius))
    r0, r1 = max(r0, 0), min(r1, h - 1)
    c0, c1 = max(c0, 0), min(c1, w - 1)
    if r0 > r1 or c0 > c1:
        return
    rows = np.arange(r0, r1 + 1, dtype=float)
    cols = np.arange(c0, c1 + 1, dtype=float)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    ab = b - a
    denom = float(ab[0] ** 2 + ab[1] ** 2)
    if denom == 0.0:
        dr, dc = rr - a[0], cc - a[1]
        d = np.hypot(dr, dc)
    else:
        t = np.clip(((rr - a[0]) * ab[0] + (cc - a[1]) * ab[1]) / denom, 0.0, 1.0)
        d = np.hypot(rr - (a[0] + t * ab[0]), cc - (a[1] + t * ab[1]))
    window = dist[r0:r1 + 1, c0:c1 + 1]
    better = d < window
    window[better] = d[better]
    if aux is not None:
        aux[r0:r1 + 1, c0:c1 + 1][better] = aux_value


def _graph_to_pixels(graph, pose, spec):
    """Vertices of a world graph in fractional pixel coordinates."""
    if graph.is_empty():
        return np.zeros((0, 2))
    ego = world_to_ego(pose, graph.vertices)
    px = np.empty_like(ego)
    px[:, 0] = spec.height / 2.0 + ego[:, 1] / spec.resolution
    px[:, 1] = spec.width / 2.0 + ego[:, 0] / spec.resolution
    return px


def initial_vertex_truth(graph, pose, spec):
    """Pixel locations the initial-vertex heatmap should fire on.

    These are (a) points where an edge crosses the BEV boundary travelling
    inward and (b) true centerline start vertices (in-degree 0) inside the
    grid. Order is deterministic: boundary entries in edge order, then
    starts in vertex order.
    """
    pts = []
    if graph.is_empty():
        return np.zeros((0, 2))
    px = _graph_to_pixels(graph, pose, spec)
    lo = np.array([0.0, 0.0])
    hi = np.array([spec.height - 1.0, spec.width - 1.0])

    def inside(p):
        return bool(np.all(p >= lo) and np.all(p <= hi))

    for s, d in graph.edges:
        p, q = px[s], px[d]
        if inside(p):
            continue
        # Liang-Barsky clip of the directed segment p -> q
        t0, t1 = 0.0, 1.0
        dpq = q - p
        ok = True
        for axis in range(2):
            if dpq[axis] == 0.0:
                if p[axis] < lo[axis] or p[axis] > hi[axis]:
                    ok = False
                    break
                continue
            ta = (lo[axis] - p[axis]) / dpq[axis]
            tb = (hi[axis] - p[axis]) / dpq[axis]
            ta, tb = min(ta, tb), max(ta, tb)
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                ok = False
                break
        if ok and t0 > 0.0:
            pts.append(p + t0 * dpq)
    in_deg = graph.in_degrees()
    for v in np.flatnonzero(in_deg == 0):
        if inside(px[v]):
            pts.append(px[v])
    return np.array(pts) if pts else np.zeros((0, 2))


def rasterize_frame(graph, pose, spec, noise=None, rng=None):
    """Render one BEV frame of a world graph under an ego pose.

    The centerline heatmap is an exact distance falloff (value 1 on the
    line, Gaussian decay, clipped beyond 4 sigma); the feature stack holds
    the (noisy) heatmap plus a local-direction channel. Rasterization is
    equivariant: rendering under a pose equals rendering the pose-transformed
    graph under the identity pose, pixel-exact.
    """
    noise = noise or NoiseConfig()
    h, w = spec.height, spec.width
    dist = np.full((h, w), np.inf)
    angle = np.zeros((h, w))
    reach = 4.0 * noise.falloff_sigma
    if not graph.is_empty():
        px = _graph_to_pixels(graph, pose, spec)
        for s, d in graph.edges:
            a, b = px[s], px[d]
            theta = math.atan2(b[1] - a[1], b[0] - a[0])  # row/col frame
            _segment_window_update(dist, angle, a, b, reach + 1.0,
                                   (theta + math.pi) / (2.0 * math.pi))
        # direction channel is only meaningful near a line
        angle[dist > reach] = 0.0
    hl = np.zeros((h, w))
    near = dist <= reach
    hl[near] = np.exp(-dist[near] ** 2 / (2.0 * noise.falloff_sigma ** 2))

    hi = np.zeros((h, w))
    bumps = initial_vertex_truth(graph, pose, spec)
    bump_reach = 4.0 * noise.bump_sigma
    for p in bumps:
        d2 = np.full((h, w), np.inf)
        _segment_window_update(d2, None, p, p, bump_reach + 1.0, 0.0)
        nearby = d2 <= bump_reach
        hi[nearby] = np.maximum(
            hi[nearby], np.exp(-d2[nearby] ** 2 / (2.0 * noise.bump_sigma ** 2)))

    if noise.amplitude > 0.0 or noise.dropout > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        if noise.amplitude > 0.0:
            hl = hl + rng.uniform(-noise.amplitude, noise.amplitude, size=(h, w))
            hi = hi + rng.uniform(-noise.amplitude, noise.amplitude, size=(h, w))
            hl = np.clip(hl, 0.0, 1.0)
            hi = np.clip(hi, 0.0, 1.0)
        if noise.dropout > 0.0:
            n_pr = math.ceil(h / noise.patch_px)
            n_pc = math.ceil(w / noise.patch_px)
            drop = rng.random((n_pr, n_pc)) < noise.dropout
            mask = ~np.repeat(np.repeat(drop, noise.patch_px, 0),
                              noise.patch_px, 1)[:h, :w]
            hl *= mask
            hi *= mask
            angle *= mask
    features = np.stack([hl, angle])
    return BevGrid(spec, pose, hl=hl, hi=hi, features=features)


def rasterize_scene(scene, noise=None):
    """All frames of a scene; per-frame noise streams spawned from the seed."""
    noise = noise if noise is not None else scene.config.noise
    seqs = np.random.SeedSequence(scene.config.seed).spawn(len(scene.poses))
    return [
        rasterize_frame(scene.graph, pose, scene.config.grid, noise,
                        rng=np.random.default_rng(seqs[t]))
        for t, pose in enumerate(scene.poses)
    ]


# ---------------------------------------------------------------------------
# Scene directory layout (export/import)
# ---------------------------------------------------------------------------

def pfm_write(path, array):
    """Write a 2-D float array as a little-endian portable float map."""
    a = np.asarray(array, dtype=np.float32)
    if a.ndim != 2:
        raise ValueError("pfm_write expects a 2-D array")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{a.shape[1]} {a.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(a[::-1].astype("<f4").tobytes())


def pfm_read(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM file")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(4 * w * h),
                             dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w)[::-1].copy()


def _channel_names(n_features):
    return ["hl", "hi"] + [f"f{i}" for i in range(n_features)]


def save_scene(path, scene, frames):
    """Write a scene directory: per-channel PFM rasters, pose manifest,
    ground-truth graph and a JSON meta file. This layout doubles as the
    import format for externally produced heatmaps."""
    import os

    from .geometry import save_graph

    os.makedirs(path, exist_ok=True)
    spec = frames[0].spec
    names = _channel_names(frames[0].features.shape[0])
    meta = {
        "frames": len(frames),
        "channels": names,
        "grid": {"height": spec.height, "width": spec.width,
                 "resolution": spec.resolution},
        "kind": scene.config.kind,
        "seed": scene.config.seed,
    }
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(path, "poses.txt"), "w", encoding="utf-8") as f:
        f.write("# frame x y yaw\n")
        for t, pose in enumerate(scene.poses):
            f.write(f"{t} {pose.x:.17g} {pose.y:.17g} {pose.yaw:.17g}\n")
    save_graph(scene.graph, os.path.join(path, "graph.txt"))
    for t, grid in enumerate(frames):
        stack = grid.channel_stack()
        for ch, name in enumerate(names):
            pfm_write(os.path.join(path, f"frame_{t:04d}_{name}.pfm"),
                      stack[ch])


def load_scene(path):
    """Read a scene directory back into (graph, poses, frames)."""
    import os

    from .geometry import load_graph

    with open(os.path.join(path, "meta.json"), "r", encoding="utf-8") as f:
        meta = json.load(f)
    g = meta["grid"]
    spec = GridSpec(g["height"], g["width"], g["resolution"])
    poses = []
    with open(os.path.join(path, "poses.txt"), "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            _, x, y, yaw = line.split()
            poses.append(EgoPose(float(x), float(y), float(yaw)))
    graph = load_graph(os.path.join(path, "graph.txt"))
    frames = []
    names = meta["channels"]
    for t in range(meta["frames"]):
        stack = np.stack([
            pfm_read(os.path.join(path, f"frame_{t:04d}_{name}.pfm")).astype(float)
            for name in names
        ])
        frames.append(BevGrid.from_stack(stack, spec, poses[t]))
    return graph, poses, frames
