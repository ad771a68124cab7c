"""Expert demonstration sampling for behavior cloning.

The expert drives the tracing loop with the ground-truth oracle and emits
one training sample per step: the ROI tensor the network would have seen,
the noise-free label vertices, and a stop flag when the label set is
empty. Uniform noise perturbs every accepted vertex before the graph
update, so the recorded ROIs reflect imperfect trajectories while the
labels keep teaching the correction back toward the centerline.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .fusion import FusionConfig
from .predictors import LabelConfig, OraclePredictor, PredictedVertex, PredictorOutput
from .tracer import AgentConfig, Tracer


def inject_noise(point, magnitude, rng):
    """Uniform per-axis perturbation in [-magnitude, +magnitude]."""
    if magnitude <= 0:
        return np.asarray(point, dtype=float).copy()
    return np.asarray(point, dtype=float) + rng.uniform(
        -magnitude, magnitude, size=2)


@dataclass
class TrainingSample:
    roi: np.ndarray                  # (c, h, w) float32
    labels: list                     # [(dx, dy)] ROI-center-relative px
    stop: bool                       # true iff labels is empty
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stop != (len(self.labels) == 0):
            raise ValueError("stop flag must mirror an empty label set")


def sample_scene(scene, frames, label_cfg=None, agent_cfg=None,
                 fusion_cfg=None, seed=0, scene_id="scene"):
    """Run the expert over a scene and collect one sample per step."""
    label_cfg = label_cfg or LabelConfig()
    agent_cfg = agent_cfg or AgentConfig()
    agent_cfg = AgentConfig(**{**agent_cfg.__dict__,
                               "move_noise_px": label_cfg.noise_px})
    samples = []

    def observer(rec):
        if rec.action == "error":
            return
        labels = [(v.dx, v.dy) for v in rec.output.vertices]
        samples.append(TrainingSample(
            roi=rec.roi, labels=labels, stop=not labels,
            meta={"scene": scene_id, "frame": rec.frame, "step": rec.step,
                  "v_t_world": [float(rec.v_t_world[0]),
                                float(rec.v_t_world[1])]},
        ))

    oracle = OraclePredictor(scene.graph, label_cfg,
                             roi_size=agent_cfg.roi_size,
                             n_max=agent_cfg.n_max)
    tracer = Tracer(oracle, agent_cfg, fusion_cfg or FusionConfig(),
                    seed=seed, observer=observer)
    result = tracer.run(frames)
    return samples, result


class ReplayPredictor:
    """Replays a sample stream's labels in recorded step order.

    With zero sampling noise this reconstructs the expert trajectory
    vertex for vertex, which is the sampler's self-consistency check.
    """

    def __init__(self, samples):
        self.samples = samples
        self.cursor = 0

    def predict(self, roi, ctx=None):
        if self.cursor >= len(self.samples):
            return PredictorOutput([])
        s = self.samples[self.cursor]
        self.cursor += 1
        return PredictorOutput(
            [PredictedVertex(dx, dy, 1.0) for dx, dy in s.labels])

    def close(self):
        pass


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

def write_dataset(path, samples):
    """Write samples as one binary record stream plus offset index.

    Each record is a metadata JSON line followed by the raw little-endian
    float32 ROI blob; ``index.txt`` lists the byte offset of every record
    and ``manifest.json`` documents tensor dimensions and channel order.
    """
    os.makedirs(path, exist_ok=True)
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    c, h, w = samples[0].roi.shape
    offsets = []
    with open(os.path.join(path, "data.bin"), "wb") as f:
        for s in samples:
            if s.roi.shape != (c, h, w):
                raise ValueError("inconsistent ROI shapes in dataset")
            offsets.append(f.tell())
            meta = dict(s.meta)
            meta["labels"] = [[float(a), float(b)] for a, b in s.labels]
            meta["stop"] = bool(s.stop)
            f.write(json.dumps(meta, separators=(",", ":"),
                               sort_keys=True).encode("utf-8") + b"\n")
            f.write(np.ascontiguousarray(s.roi, dtype="<f4").tobytes())
    with open(os.path.join(path, "index.txt"), "w", encoding="utf-8") as f:
        for off in offsets:
            f.write(f"{off}\n")
    manifest = {
        "count": len(samples),
        "roi_channels": int(c),
        "roi_size": int(h),
        "channel_order": "fused feature channels, then the history mask",
        "labels": "ROI-center-relative (dx, dy) pixels; empty means stop",
        "tensor": "row-major little-endian float32, c*h*w values per record",
    }
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_dataset(path):
    with open(os.path.join(path, "manifest.json"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    c = manifest["roi_channels"]
    h = w = manifest["roi_size"]
    blob = c * h * w * 4
    with open(os.path.join(path, "index.txt"), "r", encoding="utf-8") as f:
        offsets = [int(line) for line in f if line.strip()]
    samples = []
    with open(os.path.join(path, "data.bin"), "rb") as f:
        for off in offsets:
            f.seek(off)
            meta = json.loads(f.readline().decode("utf-8"))
            roi = np.frombuffer(f.read(blob), dtype="<f4").reshape(c, h, w)
            labels = [tuple(v) for v in meta.pop("labels")]
            stop = meta.pop("stop")
            samples.append(TrainingSample(roi=roi.copy(), labels=labels,
                                          stop=stop, meta=meta))
    return samples, manifest


# ---------------------------------------------------------------------------
# Coverage audit
# ---------------------------------------------------------------------------

def coverage_audit(samples, scene, label_cfg=None, spacing=0.5):
    """Fraction of in-footprint truth arc covered by the sampled labels.

    The union of per-sample (position -> label) segments, dilated by the
    step distance, should cover nearly all of the truth graph that was ever
    in view; the dataset would otherwise under-teach part of the map.
    """
    from scipy.spatial import cKDTree

    from .geometry import resample, world_to_ego

    label_cfg = label_cfg or LabelConfig()
    spec = scene.config.grid
    res = spec.resolution
    seg_points = []
    for s in samples:
        v_world = np.asarray(s.meta["v_t_world"], dtype=float)
        pose = scene.poses[s.meta["frame"]]
        ego = world_to_ego(pose, v_world)
        v_px = np.array([spec.height / 2.0 + ego[1] / res,
                         spec.width / 2.0 + ego[0] / res])
        center = np.round(v_px)
        for dx, dy in s.labels:
            target = center + np.array([dy, dx])
            for t in np.linspace(0.0, 1.0, 6):
                p = v_px * (1 - t) + target * t
                ego_pt = np.array([(p[1] - spec.width / 2.0) * res,
                                   (p[0] - spec.height / 2.0) * res])
                from .geometry import ego_to_world

                seg_points.append(ego_to_world(pose, ego_pt))
    if not seg_points:
        return 0.0
    tree = cKDTree(np.array(seg_points))
    fine = resample(scene.graph, spacing)
    in_view = np.zeros(fine.n_vertices, dtype=bool)
    for pose in scene.poses:
        ego = world_to_ego(pose, fine.vertices)
        rows = spec.height / 2.0 + ego[:, 1] / res
        cols = spec.width / 2.0 + ego[:, 0] / res
        in_view |= ((rows >= 0) & (rows <= spec.height - 1)
                    & (cols >= 0) & (cols <= spec.width - 1))
    pts = fine.vertices[in_view]
    if not len(pts):
        return 1.0
    d, _ = tree.query(pts)
    reach = label_cfg.step_px * res
    return float((d <= reach).mean())
