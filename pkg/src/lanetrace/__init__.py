"""Lane-centerline graph tracing from sequential BEV heatmaps.

The package builds a global vectorized centerline graph by iterating an
agent over per-frame bird's-eye-view rasters, and ships everything needed to
exercise that loop at desk scale: a synthetic scene simulator, temporal
fusion of neighboring frames, expert next-vertex labeling for imitation
data, a skeletonization baseline, and pixel/topology evaluation metrics.
"""

from .geometry import (
    CenterlineGraph,
    EgoPose,
    GraphBuilder,
    GridSpec,
    ego_to_pixel,
    ego_to_world,
    geodesic_ball,
    graph_from_text,
    graph_to_text,
    load_graph,
    nearest_vertex,
    pixel_to_ego,
    resample,
    save_graph,
    world_to_ego,
)

__version__ = "0.1.0"
