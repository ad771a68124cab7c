"""Raster-to-vector baseline: threshold, thin, and extract a graph.

This is the comparison pipeline built on segmentation post-processing:
heatmaps (usually accumulated into a world raster) are binarized, thinned
to one-pixel skeletons, and vectorized into a centerline graph. Instances
are whatever the skeleton connectivity says they are, which is exactly why
the iterative agent beats it on topology at intersections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _thin

from .geometry import CenterlineGraph
from .fusion import accumulate_world, world_spec_for

_EIGHT = np.ones((3, 3), dtype=int)
_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1),
            (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class VectorizeConfig:
    threshold: float = 0.3       # binarization threshold
    min_component_px: int = 10   # drop smaller connected components
    spur_px: float = 5.0         # prune leaf branches shorter than this
    simplify_px: float = 0.75    # polyline simplification tolerance

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.min_component_px < 0 or self.spur_px < 0 or self.simplify_px < 0:
            raise ValueError("lengths must be >= 0")


def binarize(raster, cfg=None):
    """Threshold a raster and drop connected components below the size floor."""
    cfg = cfg or VectorizeConfig()
    mask = np.asarray(raster) >= cfg.threshold
    if cfg.min_component_px > 1 and mask.any():
        labels, n = ndimage.label(mask, structure=_EIGHT)
        counts = np.bincount(labels.ravel())
        small = np.flatnonzero(counts < cfg.min_component_px)
        mask &= ~np.isin(labels, small[small > 0])
    return mask


def skeletonize(mask):
    """Morphological thinning to a 1-px-wide, 8-connected skeleton.

    Anti-extensive (output is a subset of the input) and idempotent.
    """
    return _thin(np.asarray(mask, dtype=bool))


def _neighbor_degrees(skel):
    deg = ndimage.convolve(skel.astype(np.uint8), _EIGHT, mode="constant")
    return (deg - 1) * skel  # convolution counts the pixel itself


def simplify_polyline(points, tolerance):
    """Douglas-Peucker simplification; endpoints are always kept."""
    pts = np.asarray(points, dtype=float)
    if len(pts) <= 2 or tolerance <= 0:
        return pts.copy()
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = pts[i], pts[j]
        ab = b - a
        denom = math.hypot(*ab)
        seg = pts[i + 1:j]
        if denom == 0.0:
            d = np.hypot(*(seg - a).T)
        else:
            d = np.abs(ab[0] * (seg[:, 1] - a[1]) - ab[1] * (seg[:, 0] - a[0])) / denom
        k = int(np.argmax(d))
        if d[k] > tolerance:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return pts[keep]


def _polyline_length(pts):
    d = np.diff(np.asarray(pts, dtype=float), axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def skeleton_to_graph(skel, cfg=None):
    """Vectorize a 1-px skeleton into a centerline graph (pixel frame).

    Junction pixels (>= 3 neighbors) and endpoints become vertices; the
    degree-2 paths between them become simplified polyline edges. Leaf
    branches shorter than the spur threshold are removed. Output vertices
    are (x=col, y=row), so pixel distances are preserved.
    """
    cfg = cfg or VectorizeConfig()
    skel = np.asarray(skel, dtype=bool)
    if not skel.any():
        return CenterlineGraph()
    deg = _neighbor_degrees(skel)
    node_mask = skel & (deg != 2)
    # adjacent node pixels act as one junction
    labels, n_nodes = ndimage.label(node_mask, structure=_EIGHT)
    centroids = ndimage.center_of_mass(node_mask, labels,
                                       range(1, n_nodes + 1)) if n_nodes else []
    visited = set()
    chains = []  # (cluster_a, cluster_b, polyline rows/cols)

    def walk(start, first):
        path = [start, first]
        prev, cur = start, first
        while not node_mask[cur]:
            nxt = None
            for dr, dc in _OFFSETS:
                cand = (cur[0] + dr, cur[1] + dc)
                if cand == prev:
                    continue
                if (0 <= cand[0] < skel.shape[0] and 0 <= cand[1] < skel.shape[1]
                        and skel[cand]):
                    nxt = cand
                    break
            if nxt is None:  # open end without a node pixel (shouldn't happen)
                break
            prev, cur = cur, nxt
            path.append(cur)
            if len(path) > skel.sum() + 2:
                break
        return path

    node_pixels = list(zip(*np.nonzero(node_mask)))
    for p in node_pixels:
        for dr, dc in _OFFSETS:
            q = (p[0] + dr, p[1] + dc)
            if not (0 <= q[0] < skel.shape[0] and 0 <= q[1] < skel.shape[1]):
                continue
            if not skel[q] or (p, q) in visited:
                continue
            if node_mask[q] and labels[p] == labels[q]:
                visited.add((p, q))
                visited.add((q, p))
                continue  # internal to one junction cluster
            path = walk(p, q)
            for a, b in zip(path[:-1], path[1:]):
                visited.add((a, b))
                visited.add((b, a))
            chains.append((labels[p], labels[path[-1]], path))
    # pure cycles have no node pixels; seed a node at an arbitrary pixel
    remaining = skel & (deg == 2)
    for a, b in visited:
        remaining[a] = False
    for p in zip(*np.nonzero(remaining)):
        if not remaining[p]:
            continue
        nbrs = [
            (p[0] + dr, p[1] + dc) for dr, dc in _OFFSETS
            if 0 <= p[0] + dr < skel.shape[0] and 0 <= p[1] + dc < skel.shape[1]
            and skel[p[0] + dr, p[1] + dc]
        ]
        path = walk(p, nbrs[0])
        for a, b in zip(path[:-1], path[1:]):
            remaining[a] = False
            remaining[b] = False
        n_nodes += 1
        centroids = list(centroids) + [p]
        chains.append((n_nodes, n_nodes, path + [p] if path[-1] != p else path))

    # chain endpoints snap to their cluster centroid so the graph connects
    attach = {}
    for a, b, _ in chains:
        attach.setdefault(a, 0)
        attach.setdefault(b, 0)
        attach[a] += 1
        attach[b] += 1

    def chain_polyline(a, b, path):
        pts = np.array(path, dtype=float)
        if a > 0:
            pts[0] = centroids[a - 1]
        if b > 0:
            pts[-1] = centroids[b - 1]
        return pts

    kept = []
    for a, b, path in chains:
        pts = chain_polyline(a, b, path)
        # prune short dangling branches
        if (_polyline_length(pts) < cfg.spur_px
                and min(attach[a], attach[b]) <= 1 and a != b):
            attach[a] -= 1
            attach[b] -= 1
            continue
        kept.append(pts)

    verts = []
    edges = []
    index = {}

    def vertex_id(p):
        key = (round(p[0] * 4) / 4, round(p[1] * 4) / 4)
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for pts in kept:
        simple = simplify_polyline(pts, cfg.simplify_px)
        ids = [vertex_id(tuple(p)) for p in simple]
        for i, j in zip(ids[:-1], ids[1:]):
            if i != j:
                edges.append((i, j))
    if not verts:
        return CenterlineGraph()
    # (row, col) -> (x=col, y=row)
    xy = np.array([(c, r) for r, c in verts])
    return CenterlineGraph(xy, edges, validate=False)


def vectorize_raster(raster, cfg=None):
    """binarize -> skeletonize -> graph, in the raster's pixel frame."""
    cfg = cfg or VectorizeConfig()
    return skeleton_to_graph(skeletonize(binarize(raster, cfg)), cfg)


def baseline_pipeline(frames, cfg=None, world_spec=None):
    """World-raster baseline over a frame sequence.

    Frames are averaged into a world grid, then vectorized. Returns the
    graph in world meters together with the world spec used.
    """
    cfg = cfg or VectorizeConfig()
    if world_spec is None:
        world_spec = world_spec_for([f.pose for f in frames], frames[0].spec)
    channels, _ = accumulate_world(frames, world_spec)
    px_graph = vectorize_raster(channels[0], cfg)
    if px_graph.is_empty():
        return CenterlineGraph(), world_spec
    world = px_graph.transformed(
        lambda v: world_spec.grid_to_world(v[:, ::-1]))  # (x=col, y=row)
    return world, world_spec
