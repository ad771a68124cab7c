"""Expert demonstration sampling for behavior cloning.

Samples a noisy expert run into training records, writes the dataset files,
reads them back, and shows a few ROI tensors with their label vertices.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from lanetrace.predictors import LabelConfig
from lanetrace.sampling import coverage_audit, read_dataset, sample_scene, write_dataset
from lanetrace.simulate import SceneConfig, generate_scene, rasterize_scene

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

scene = generate_scene(SceneConfig(kind="split_merge", extent=78.0, seed=9))
frames = rasterize_scene(scene)
samples, _ = sample_scene(scene, frames, LabelConfig(noise_px=2.0), seed=1)
print(f"{len(samples)} samples "
      f"({sum(s.stop for s in samples)} stops, "
      f"{sum(len(s.labels) > 1 for s in samples)} branch labels)")
print(f"truth coverage of the dataset: {coverage_audit(samples, scene):.3f}")

dataset_dir = os.path.join(OUT, "dataset")
write_dataset(dataset_dir, samples)
back, manifest = read_dataset(dataset_dir)
print(f"round trip: {manifest['count']} records, "
      f"roi {manifest['roi_channels']}x{manifest['roi_size']}^2")

# a gallery of ROIs: heatmap channel with label vertices on top
picks = [s for s in back if len(s.labels) >= 1][:: max(1, len(back) // 6)][:6]
fig, axes = plt.subplots(1, len(picks), figsize=(3 * len(picks), 3.4))
half = manifest["roi_size"] // 2
for ax, s in zip(axes, picks):
    ax.imshow(s.roi[0], cmap="magma")
    ax.plot(half, half, "c+", markersize=12)
    for dx, dy in s.labels:
        ax.plot(half + dx, half + dy, "wo", markersize=6, markeredgecolor="k")
    ax.set_title(f"frame {s.meta['frame']}")
    ax.set_xticks([])
    ax.set_yticks([])
fig.tight_layout()
fig.savefig(os.path.join(OUT, "expert_rois.png"), dpi=130)
plt.close(fig)
print("wrote expert_rois.png")
