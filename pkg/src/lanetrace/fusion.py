"""Temporal fusion of BEV frames.

Neighboring frames are warped into the current ego frame with bilinear
resampling and averaged per pixel over the contributions that are actually
in view, which removes the frame-to-frame inconsistency of the upstream
heatmaps. The same sampling machinery accumulates frames into a fixed
world-frame raster for the skeletonization baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import EgoPose, GridSpec, relative_pose
from .simulate import BevGrid


@dataclass(frozen=True)
class FusionConfig:
    """Window half-width in frames and window shape.

    ``centered`` uses frames [T - tau, T + tau] (the offline mapping setting
    where future frames exist); ``causal`` restricts to [T - tau, T].
    """

    tau: int = 1
    mode: str = "centered"

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.mode not in ("centered", "causal"):
            raise ValueError("mode must be 'centered' or 'causal'")


def sample_bilinear(image, rows, cols):
    """Bilinear samples of ``image`` at fractional (rows, cols).

    Returns ``(values, valid)``; positions outside [0, H-1] x [0, W-1]
    are invalid and sample to 0. Positions exactly on the high boundary are
    valid (the interpolation degenerates to the boundary row/col).
    """
    h, w = image.shape[-2:]
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    valid = (rows >= 0.0) & (rows <= h - 1) & (cols >= 0.0) & (cols <= w - 1)
    r = np.clip(rows, 0.0, h - 1)
    c = np.clip(cols, 0.0, w - 1)
    r0 = np.minimum(np.floor(r), h - 2).astype(int)
    c0 = np.minimum(np.floor(c), w - 2).astype(int)
    fr = r - r0
    fc = c - c0
    if image.ndim == 2:
        v = ((1 - fr) * (1 - fc) * image[r0, c0]
             + (1 - fr) * fc * image[r0, c0 + 1]
             + fr * (1 - fc) * image[r0 + 1, c0]
             + fr * fc * image[r0 + 1, c0 + 1])
        return np.where(valid, v, 0.0), valid
    v = ((1 - fr) * (1 - fc) * image[:, r0, c0]
         + (1 - fr) * fc * image[:, r0, c0 + 1]
         + fr * (1 - fc) * image[:, r0 + 1, c0]
         + fr * fc * image[:, r0 + 1, c0 + 1])
    return np.where(valid[None], v, 0.0), valid


def _pixel_centers_ego(spec):
    rows = np.arange(spec.height, dtype=float)
    cols = np.arange(spec.width, dtype=float)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    x = (cc - spec.width / 2.0) * spec.resolution
    y = (rr - spec.height / 2.0) * spec.resolution
    return x, y


def warp_grid(src, dst_pose):
    """Warp all channels of ``src`` into the ego frame of ``dst_pose``.

    Returns ``(channels, valid)`` where channels is the (C, H, W) stack of
    the source frame resampled at the destination pixel centers and valid
    marks destination pixels whose sample position lies inside the source.
    A warp onto the source's own pose is an exact no-op.
    """
    stack = src.channel_stack()
    rel = relative_pose(src.pose, dst_pose)
    if rel.x == 0.0 and rel.y == 0.0 and rel.yaw == 0.0:
        return stack.copy(), np.ones(stack.shape[1:], dtype=bool)
    spec = src.spec
    x, y = _pixel_centers_ego(spec)
    c, s = math.cos(rel.yaw), math.sin(rel.yaw)
    x_src = rel.x + c * x - s * y
    y_src = rel.y + s * x + c * y
    rows = spec.height / 2.0 + y_src / spec.resolution
    cols = spec.width / 2.0 + x_src / spec.resolution
    return sample_bilinear(stack, rows, cols)


def fuse_window(frames, index, cfg=None):
    """Mask-weighted mean of the warped window around ``frames[index]``.

    Pixels with no valid contribution are 0. Returns the fused frame (same
    pose as ``frames[index]``) and the per-pixel contribution count.
    """
    if not frames:
        raise ValueError("fuse_window needs at least one frame")
    cfg = cfg or FusionConfig()
    lo = max(0, index - cfg.tau)
    hi = index if cfg.mode == "causal" else min(len(frames) - 1, index + cfg.tau)
    target = frames[index]
    acc = None
    count = None
    for t in range(lo, hi + 1):
        channels, valid = warp_grid(frames[t], target.pose)
        if acc is None:
            acc = np.zeros_like(channels)
            count = np.zeros(valid.shape, dtype=int)
        acc += channels * valid[None]
        count += valid
    covered = count > 0
    fused = np.zeros_like(acc)
    fused[:, covered] = acc[:, covered] / count[covered]
    # averaging heatmaps keeps them in [0, 1]; clip away float dust
    fused[0] = np.clip(fused[0], 0.0, 1.0)
    fused[1] = np.clip(fused[1], 0.0, 1.0)
    return BevGrid.from_stack(fused, target.spec, target.pose), count


@dataclass(frozen=True)
class WorldSpec:
    """Axis-aligned world raster: pixel (0, 0) center sits at (x0, y0)."""

    x0: float
    y0: float
    height: int
    width: int
    resolution: float = 0.25

    def world_to_grid(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        px = np.empty_like(p)
        px[:, 0] = (p[:, 1] - self.y0) / self.resolution
        px[:, 1] = (p[:, 0] - self.x0) / self.resolution
        return px

    def grid_to_world(self, pixels):
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        p = np.empty_like(px)
        p[:, 0] = self.x0 + px[:, 1] * self.resolution
        p[:, 1] = self.y0 + px[:, 0] * self.resolution
        return p


def world_spec_for(poses, spec, margin=2.0, resolution=None):
    """Smallest axis-aligned world raster covering every frame footprint."""
    resolution = resolution or spec.resolution
    half_h = (spec.height / 2.0) * spec.resolution
    half_w = (spec.width / 2.0) * spec.resolution
    corners = []
    for pose in poses:
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        for ex, ey in ((half_w, half_h), (half_w, -half_h),
                       (-half_w, half_h), (-half_w, -half_h)):
            corners.append((pose.x + c * ex - s * ey, pose.y + s * ex + c * ey))
    corners = np.array(corners)
    x0 = corners[:, 0].min() - margin
    y0 = corners[:, 1].min() - margin
    width = int(math.ceil((corners[:, 0].max() + margin - x0) / resolution)) + 1
    height = int(math.ceil((corners[:, 1].max() + margin - y0) / resolution)) + 1
    return WorldSpec(x0, y0, height, width, resolution)


def accumulate_world(frames, world_spec):
    """Mask-weighted running mean of all frames in a fixed world raster.

    Returns ``(channels, weight)``: the per-pixel mean of every valid
    contribution (0 where nothing was seen) and the contribution count.
    Order-invariant across frame permutations up to float rounding.
    """
    ws = world_spec
    rows = np.arange(ws.height, dtype=float)
    cols = np.arange(ws.width, dtype=float)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    wx = ws.x0 + cc * ws.resolution
    wy = ws.y0 + rr * ws.resolution
    acc = None
    count = np.zeros((ws.height, ws.width), dtype=int)
    for frame in frames:
        pose = frame.pose
        spec = frame.spec
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        dx = wx - pose.x
        dy = wy - pose.y
        ex = c * dx + s * dy
        ey = -s * dx + c * dy
        rows_f = spec.height / 2.0 + ey / spec.resolution
        cols_f = spec.width / 2.0 + ex / spec.resolution
        channels, valid = sample_bilinear(frame.channel_stack(), rows_f, cols_f)
        if acc is None:
            acc = np.zeros_like(channels)
        acc += channels * valid[None]
        count += valid
    if acc is None:
        raise ValueError("accumulate_world needs at least one frame")
    covered = count > 0
    out = np.zeros_like(acc)
    out[:, covered] = acc[:, covered] / count[covered]
    return out, count
