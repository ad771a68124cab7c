"""Rendering of graphs and heatmaps to image files.

Global maps draw in world meters with one color per centerline instance
(explicit tags when present, connected components otherwise), optionally
over a world-accumulated heatmap underlay.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

_CYCLE = plt.get_cmap("tab20").colors


def instance_colors(graph):
    """Per-vertex color index: tags if carried, else connected components."""
    if graph.is_empty():
        return np.zeros(0, dtype=int)
    if graph.tags is not None and len(np.unique(graph.tags)) > 1:
        return graph.tags.copy()
    n = graph.n_vertices
    if not len(graph.edges):
        return np.arange(n)
    m = csr_matrix((np.ones(len(graph.edges)),
                    (graph.edges[:, 0], graph.edges[:, 1])), shape=(n, n))
    return connected_components(m, directed=False)[1]


def draw_graph(ax, graph, color=None, linewidth=1.6, alpha=1.0, label=None):
    """Draw edges; ``color=None`` colors by instance, otherwise fixed."""
    if graph.is_empty() or not len(graph.edges):
        return
    groups = instance_colors(graph)
    first = True
    for s, d in graph.edges:
        a, b = graph.vertices[s], graph.vertices[d]
        c = color if color is not None else _CYCLE[int(groups[s]) % len(_CYCLE)]
        ax.plot([a[0], b[0]], [a[1], b[1]], color=c, linewidth=linewidth,
                alpha=alpha, label=label if first else None,
                solid_capstyle="round")
        first = False


def render_map(path, graphs, underlay=None, world_spec=None, title=None):
    """Write a world-frame map image.

    ``graphs`` is a list of (graph, style) pairs where style is a dict for
    :func:`draw_graph`; ``underlay`` an optional world raster with its
    :class:`~lanetrace.fusion.WorldSpec`.
    """
    fig, ax = plt.subplots(figsize=(8, 8))
    if underlay is not None and world_spec is not None:
        ws = world_spec
        extent = [ws.x0, ws.x0 + ws.width * ws.resolution,
                  ws.y0, ws.y0 + ws.height * ws.resolution]
        ax.imshow(underlay, origin="lower", extent=extent, cmap="gray_r",
                  vmin=0.0, vmax=1.0)
    for graph, style in graphs:
        draw_graph(ax, graph, **style)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    handles, labels = ax.get_legend_handles_labels()
    if labels:
        ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_frame(path, grid, graphs=(), title=None):
    """Write one BEV frame (heatmap in pixel coordinates, row 0 on top)."""
    fig, axes = plt.subplots(1, 2, figsize=(11, 5.5))
    axes[0].imshow(grid.hl, cmap="magma", vmin=0, vmax=1)
    axes[0].set_title("centerline heatmap")
    axes[1].imshow(grid.hi, cmap="magma", vmin=0, vmax=1)
    axes[1].set_title("initial-vertex heatmap")
    for ax in axes:
        ax.set_xlabel("col")
        ax.set_ylabel("row")
    for graph, style in graphs:
        # pixel-frame overlays: graphs carry (x=col, y=row)
        for s, d in graph.edges:
            a, b = graph.vertices[s], graph.vertices[d]
            axes[0].plot([a[0], b[0]], [a[1], b[1]], **style)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
