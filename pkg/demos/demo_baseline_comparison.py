"""Agent vs. skeletonization baseline at a degraded intersection.

The baseline averages every frame into a world raster, thins it, and
vectorizes the skeleton. That welds overlapping centerline instances into
one blob graph, while the agent keeps instances apart; the topology
metrics show the difference even when the pixel scores agree.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from lanetrace.fusion import accumulate_world, world_spec_for
from lanetrace.metrics import MetricConfig, evaluate
from lanetrace.predictors import HeatmapGatedOracle, LabelConfig
from lanetrace.render import draw_graph
from lanetrace.simulate import NoiseConfig, SceneConfig, generate_scene, rasterize_scene
from lanetrace.tracer import trace_sequence
from lanetrace.vectorize import VectorizeConfig, baseline_pipeline

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

cfg = SceneConfig(kind="four_way", lanes=1, seed=504,
                  noise=NoiseConfig(amplitude=0.08, dropout=0.04),
                  turn_connectors="none")
scene = generate_scene(cfg)
frames = rasterize_scene(scene)

agent = trace_sequence(frames, HeatmapGatedOracle(scene.graph, LabelConfig()))
r_agent = evaluate(agent.graph, scene.graph, MetricConfig())
baseline, ws = baseline_pipeline(frames, VectorizeConfig())
r_base = evaluate(baseline, scene.graph, MetricConfig())

print("agent   ", r_agent.to_text(), "", sep="\n")
print("baseline", r_base.to_text(), "", sep="\n")

world, _ = accumulate_world(frames, ws)
extent = [ws.x0, ws.x0 + ws.width * ws.resolution,
          ws.y0, ws.y0 + ws.height * ws.resolution]
fig, axes = plt.subplots(1, 3, figsize=(18, 6))
axes[0].imshow(world[0], origin="lower", extent=extent, cmap="gray_r")
axes[0].set_title("world-averaged heatmap (noisy)")
draw_graph(axes[1], agent.graph)
axes[1].set_title(f"agent  T-F {r_agent.tf:.3f}")
draw_graph(axes[2], baseline)
axes[2].set_title(f"baseline  T-F {r_base.tf:.3f}")
for ax in axes:
    ax.set_aspect("equal")
    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
fig.tight_layout()
fig.savefig(os.path.join(OUT, "baseline_comparison.png"), dpi=130)
plt.close(fig)
print("wrote baseline_comparison.png")
