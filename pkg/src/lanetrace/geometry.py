"""Geometric graph substrate: directed centerline graphs, SE(2) transforms
between world / ego / pixel frames, arc-length resampling and geodesic queries.

Conventions (asserted by tests, used everywhere else in the package):
  * world and ego coordinates are metric (x, y) pairs; ego x points along the
    vehicle heading.
  * pixel coordinates are fractional (row, col); the grid center is the ego
    origin, ego +x maps to increasing col and ego +y to increasing row.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

MERGE_RADIUS = 1e-6  # meters; vertices closer than this are duplicates


def normalize_angle(a):
    """Wrap an angle (radians) into (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class EgoPose:
    """SE(2) pose of the ego vehicle: position in meters, yaw in radians."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    def as_tuple(self):
        return (self.x, self.y, self.yaw)


@dataclass(frozen=True)
class GridSpec:
    """BEV raster geometry. The grid is ego-centered and square by default."""

    height: int = 200
    width: int = 200
    resolution: float = 0.25  # meters per pixel

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.height % 2 or self.width % 2:
            raise ValueError("grid dimensions must be even")

    @property
    def extent(self):
        """(height, width) of the grid in meters."""
        return (self.height * self.resolution, self.width * self.resolution)


class CenterlineGraph:
    """Directed geometric graph of lane centerlines.

    Vertices are 2-D points (meters, world frame unless a caller states
    otherwise); edges are ordered (src, dst) vertex-index pairs. An optional
    integer instance tag per vertex identifies which centerline instance a
    vertex belongs to. Instances are immutable after construction.
    """

    def __init__(self, vertices=None, edges=None, tags=None, validate=True):
        if vertices is None or len(vertices) == 0:
            self.vertices = np.zeros((0, 2), dtype=float)
        else:
            self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        if edges is None or len(edges) == 0:
            self.edges = np.zeros((0, 2), dtype=np.int64)
        else:
            self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        if tags is None:
            self.tags = None
        else:
            self.tags = np.array(tags, dtype=np.int64).reshape(-1)
            if len(self.tags) != len(self.vertices):
                raise ValueError("tags must match vertex count")
        if validate:
            self._validate()
        self._adj = None
        self._radj = None

    def _validate(self):
        n = len(self.vertices)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertices must be finite")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError("edge references a missing vertex")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValueError("self-loop edges are not allowed")
        if n > 1:
            tree = cKDTree(self.vertices)
            pairs = tree.query_pairs(MERGE_RADIUS)
            if pairs:
                raise ValueError(
                    f"duplicated vertices within {MERGE_RADIUS} m: {sorted(pairs)[:5]}"
                )

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    def is_empty(self):
        return len(self.vertices) == 0

    def edge_lengths(self):
        if not len(self.edges):
            return np.zeros(0)
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def total_length(self):
        return float(self.edge_lengths().sum())

    def out_adjacency(self):
        """List of (neighbor, edge_index) per vertex, following edge direction."""
        if self._adj is None:
            adj = [[] for _ in range(len(self.vertices))]
            for k, (s, d) in enumerate(self.edges):
                adj[s].append((int(d), k))
            self._adj = adj
        return self._adj

    def in_adjacency(self):
        if self._radj is None:
            radj = [[] for _ in range(len(self.vertices))]
            for k, (s, d) in enumerate(self.edges):
                radj[d].append((int(s), k))
            self._radj = radj
        return self._radj

    def out_degrees(self):
        deg = np.zeros(len(self.vertices), dtype=int)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 0], 1)
        return deg

    def in_degrees(self):
        deg = np.zeros(len(self.vertices), dtype=int)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def degrees(self):
        return self.in_degrees() + self.out_degrees()

    def transformed(self, fn):
        """New graph with ``fn`` applied to the vertex array."""
        return CenterlineGraph(fn(self.vertices.copy()), self.edges.copy(),
                               None if self.tags is None else self.tags.copy(),
                               validate=False)


# ---------------------------------------------------------------------------
# SE(2) transforms
# ---------------------------------------------------------------------------

def world_to_ego(pose, points):
    """Rigid transform of world points into the ego frame of ``pose``.

    Accepts a single (x, y) pair or an (N, 2) array; returns the same shape.
    """
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = p.reshape(-1, 2)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx = p[:, 0] - pose.x
    dy = p[:, 1] - pose.y
    out = np.empty_like(p)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    return out[0] if single else out


def ego_to_world(pose, points):
    """Inverse of :func:`world_to_ego`."""
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = p.reshape(-1, 2)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    out = np.empty_like(p)
    out[:, 0] = pose.x + c * p[:, 0] - s * p[:, 1]
    out[:, 1] = pose.y + s * p[:, 0] + c * p[:, 1]
    return out[0] if single else out


def relative_pose(src, dst):
    """Pose of ``dst`` expressed in the ego frame of ``src``.

    When ``src == dst`` the result is exactly the identity (zero translation
    and yaw), which downstream warps rely on for bit-exact no-op resampling.
    """
    c, s = math.cos(src.yaw), math.sin(src.yaw)
    dx = dst.x - src.x
    dy = dst.y - src.y
    return EgoPose(c * dx + s * dy, -s * dx + c * dy, dst.yaw - src.yaw)


def ego_to_pixel(points, spec):
    """Ego points -> fractional (row, col) pixel coordinates.

    Returns ``(pixels, inside)`` where ``inside`` flags points whose pixel
    coordinates fall within [0, H-1] x [0, W-1].
    """
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = p.reshape(-1, 2)
    px = np.empty_like(p)
    px[:, 0] = spec.height / 2.0 + p[:, 1] / spec.resolution
    px[:, 1] = spec.width / 2.0 + p[:, 0] / spec.resolution
    inside = (
        (px[:, 0] >= 0.0) & (px[:, 0] <= spec.height - 1)
        & (px[:, 1] >= 0.0) & (px[:, 1] <= spec.width - 1)
    )
    if single:
        return px[0], bool(inside[0])
    return px, inside


def pixel_to_ego(pixels, spec):
    """Fractional (row, col) pixel coordinates -> ego points."""
    px = np.asarray(pixels, dtype=float)
    single = px.ndim == 1
    px = px.reshape(-1, 2)
    out = np.empty_like(px)
    out[:, 0] = (px[:, 1] - spec.width / 2.0) * spec.resolution
    out[:, 1] = (px[:, 0] - spec.height / 2.0) * spec.resolution
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Graph operations
# ---------------------------------------------------------------------------

def resample(graph, spacing):
    """Subdivide every edge so no output edge exceeds ``spacing``.

    Original vertices (hence junctions and endpoints) are preserved exactly;
    interior points are inserted on straight edges only, so the polyline
    geometry is unchanged. Idempotent at a fixed spacing.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if graph.is_empty():
        return CenterlineGraph()
    verts = [graph.vertices]
    tags = None if graph.tags is None else [graph.tags]
    new_edges = []
    next_id = len(graph.vertices)
    for s, d in graph.edges:
        a = graph.vertices[s]
        b = graph.vertices[d]
        length = math.hypot(b[0] - a[0], b[1] - a[1])
        # tiny slack so an edge of length == spacing (from a previous pass)
        # is not split again
        pieces = max(1, int(math.ceil(length / spacing - 1e-9)))
        if pieces == 1:
            new_edges.append((int(s), int(d)))
            continue
        t = np.arange(1, pieces)[:, None] / pieces
        interior = a[None, :] * (1.0 - t) + b[None, :] * t
        verts.append(interior)
        if tags is not None:
            tags.append(np.full(pieces - 1, graph.tags[s], dtype=np.int64))
        chain = [int(s)] + list(range(next_id, next_id + pieces - 1)) + [int(d)]
        next_id += pieces - 1
        new_edges.extend(zip(chain[:-1], chain[1:]))
    return CenterlineGraph(
        np.vstack(verts), new_edges,
        None if tags is None else np.concatenate(tags),
        validate=False,
    )


def geodesic_ball(graph, source, radius, directed=True):
    """Vertices within shortest-path distance ``radius`` of ``source``.

    Dijkstra semantics with Euclidean edge weights; the source is always
    included. ``directed=False`` allows traversal against edge direction.
    """
    n = graph.n_vertices
    if source < 0 or source >= n:
        raise ValueError("source vertex not in graph")
    adj = [[] for _ in range(n)]
    lengths = graph.edge_lengths()
    for k, (s, d) in enumerate(graph.edges):
        w = lengths[k]
        adj[s].append((int(d), w))
        if not directed:
            adj[d].append((int(s), w))
    dist = {source: 0.0}
    heap = [(0.0, source)]
    out = []
    while heap:
        d0, u = heapq.heappop(heap)
        if d0 > dist.get(u, math.inf):
            continue
        out.append(u)
        for v, w in adj[u]:
            nd = d0 + w
            if nd <= radius and nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return sorted(out)


def nearest_vertex(graph, point):
    """Index and distance of the vertex closest to ``point``.

    Ties break toward the lowest vertex index for determinism.
    """
    if graph.is_empty():
        raise ValueError("nearest_vertex on an empty graph")
    d = graph.vertices - np.asarray(point, dtype=float)[None, :]
    dist2 = d[:, 0] ** 2 + d[:, 1] ** 2
    i = int(np.argmin(dist2))
    return i, float(math.sqrt(dist2[i]))


def point_segment_distance(points, a, b):
    """Distances from ``points`` (N, 2) to segment a-b, plus the projections."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab[0] ** 2 + ab[1] ** 2)
    if denom == 0.0:
        proj = np.broadcast_to(a, p.shape).copy()
    else:
        t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
        proj = a[None, :] + t[:, None] * ab[None, :]
    d = p - proj
    return np.hypot(d[:, 0], d[:, 1]), proj


def project_to_graph(graph, point):
    """Project a point onto the closest edge of the graph.

    Returns ``(distance, edge_index, projected_point)``. Ties break toward
    the lowest edge index. Raises on a graph without edges.
    """
    if not len(graph.edges):
        raise ValueError("project_to_graph needs at least one edge")
    p = np.asarray(point, dtype=float)
    best = (math.inf, -1, None)
    for k, (s, d) in enumerate(graph.edges):
        dist, proj = point_segment_distance(p[None, :], graph.vertices[s],
                                            graph.vertices[d])
        if dist[0] < best[0] - 1e-15:
            best = (float(dist[0]), k, proj[0])
    return best


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_HEADER = "centerline-graph v1"


def graph_to_text(graph):
    """Serialize to the plain-text interchange format (9 significant digits).

    The text form is canonical: load + save reproduces the file bit-exactly.
    """
    lines = [_HEADER, f"vertices {graph.n_vertices}"]
    for i, (x, y) in enumerate(graph.vertices):
        tag = "-" if graph.tags is None else str(int(graph.tags[i]))
        lines.append(f"{i} {x:.9g} {y:.9g} {tag}")
    lines.append(f"edges {graph.n_edges}")
    for s, d in graph.edges:
        lines.append(f"{s} {d}")
    return "\n".join(lines) + "\n"


def graph_from_text(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise ValueError("not a centerline graph file")
    head, n = lines[1].split()
    if head != "vertices":
        raise ValueError("malformed vertex header")
    n = int(n)
    verts = np.zeros((n, 2), dtype=float)
    tags = np.zeros(n, dtype=np.int64)
    has_tags = False
    for ln in lines[2:2 + n]:
        parts = ln.split()
        i = int(parts[0])
        verts[i] = (float(parts[1]), float(parts[2]))
        if parts[3] != "-":
            tags[i] = int(parts[3])
            has_tags = True
    head, m = lines[2 + n].split()
    if head != "edges":
        raise ValueError("malformed edge header")
    m = int(m)
    edges = [tuple(map(int, ln.split())) for ln in lines[3 + n:3 + n + m]]
    return CenterlineGraph(verts, edges, tags if has_tags else None,
                           validate=False)


def save_graph(graph, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(graph_to_text(graph))


def load_graph(path):
    with open(path, "r", encoding="utf-8") as f:
        return graph_from_text(f.read())


# ---------------------------------------------------------------------------
# Incremental construction
# ---------------------------------------------------------------------------

class GraphBuilder:
    """Mutable graph under construction; the only mutation point in the package.

    New vertices merge into an existing vertex closer than ``merge_radius``.
    Duplicate edges and self-loops are silently dropped.
    """

    def __init__(self, merge_radius=MERGE_RADIUS):
        self.merge_radius = merge_radius
        self._verts = np.zeros((64, 2), dtype=float)
        self._tags = np.zeros(64, dtype=np.int64)
        self.n = 0
        self.edges = []
        self._edge_set = set()
        self.adjacency = []  # per vertex: list of (other_vertex, edge_index)

    def vertices_array(self):
        return self._verts[: self.n]

    def tags_array(self):
        return self._tags[: self.n]

    def _grow(self):
        if self.n == len(self._verts):
            self._verts = np.vstack([self._verts, np.zeros_like(self._verts)])
            self._tags = np.concatenate([self._tags, np.zeros_like(self._tags)])

    def nearest(self, p):
        """(index, distance) of the nearest existing vertex, or (-1, inf)."""
        if self.n == 0:
            return -1, math.inf
        d = self._verts[: self.n] - np.asarray(p, dtype=float)[None, :]
        dist2 = d[:, 0] ** 2 + d[:, 1] ** 2
        i = int(np.argmin(dist2))
        return i, float(math.sqrt(dist2[i]))

    def add_vertex(self, p, tag=0):
        i, dist = self.nearest(p)
        if dist < self.merge_radius:
            return i
        self._grow()
        self._verts[self.n] = p
        self._tags[self.n] = tag
        self.adjacency.append([])
        self.n += 1
        return self.n - 1

    def add_edge(self, i, j):
        if i == j or (i, j) in self._edge_set:
            return
        self._edge_set.add((i, j))
        k = len(self.edges)
        self.edges.append((i, j))
        self.adjacency[i].append((j, k))
        self.adjacency[j].append((i, k))

    def vertex_directions(self, i):
        """Unit directions of all edges incident to vertex ``i`` (as traversed
        away from it), used for direction-aware merging."""
        dirs = []
        p = self._verts[i]
        for j, _ in self.adjacency[i]:
            d = self._verts[j] - p
            norm = math.hypot(d[0], d[1])
            if norm > 0:
                dirs.append(d / norm)
        return dirs

    def build(self):
        return CenterlineGraph(self.vertices_array().copy(), list(self.edges),
                               self.tags_array().copy(), validate=False)
