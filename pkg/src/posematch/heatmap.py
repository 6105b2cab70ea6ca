"""Gaussian target heatmaps, argmax peak decoding, bilinear resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianSpec:
    sigma_hm: float = 2.0

    def __post_init__(self) -> None:
        if self.sigma_hm <= 0:
            raise ValueError("sigma_hm must be positive")


def encode(keypoints_hm, visibility, spec: GaussianSpec, resolution) -> np.ndarray:
    """Per-keypoint Gaussian bumps evaluated at the true sub-pixel center.

    Each channel is rescaled so its maximum is exactly 1 at the grid cell
    nearest the keypoint (keeping sub-pixel shape so decoding can refine
    below one cell). Channels of visibility-0 keypoints are identically
    zero; out-of-grid peaks truncate.
    """
    height, width = resolution
    pts = np.asarray(keypoints_hm, dtype=np.float64).reshape(-1, 2)
    vis = np.asarray(visibility)
    us = np.arange(width, dtype=np.float64)
    vs = np.arange(height, dtype=np.float64)
    stack = np.zeros((len(pts), height, width), dtype=np.float64)
    two_sigma_sq = 2.0 * spec.sigma_hm ** 2
    for j, ((x, y), v) in enumerate(zip(pts, vis)):
        if v <= 0:
            continue
        du = (us - x) ** 2
        dv = (vs - y) ** 2
        channel = np.exp(-(dv[:, None] + du[None, :]) / two_sigma_sq)
        in_grid = -0.5 <= x <= width - 0.5 and -0.5 <= y <= height - 0.5
        if in_grid:
            channel = channel / channel.max()
        stack[j] = channel
    return stack


def decode(stack: np.ndarray) -> np.ndarray:
    """Argmax peaks with a quarter-cell shift toward the larger neighbor.

    Returns J x (x, y, confidence). All-zero channels decode to
    (0, 0, 0.0).
    """
    stack = np.asarray(stack)
    num, height, width = stack.shape
    out = np.zeros((num, 3), dtype=np.float64)
    for j in range(num):
        channel = stack[j]
        peak = channel.max()
        if peak <= 0:
            continue
        py, px = np.unravel_index(np.argmax(channel), channel.shape)
        x, y = float(px), float(py)
        left = channel[py, px - 1] if px > 0 else -np.inf
        right = channel[py, px + 1] if px < width - 1 else -np.inf
        if right > left and np.isfinite(right):
            x += 0.25
        elif left > right and np.isfinite(left):
            x -= 0.25
        up = channel[py - 1, px] if py > 0 else -np.inf
        down = channel[py + 1, px] if py < height - 1 else -np.inf
        if down > up and np.isfinite(down):
            y += 0.25
        elif up > down and np.isfinite(up):
            y -= 0.25
        out[j] = (x, y, float(peak))
    return out


def resample_bilinear(feature_map: np.ndarray, target_resolution) -> np.ndarray:
    """Corner-aligned bilinear resampling of a C x h x w map.

    Exact on constant and axis-linear inputs; matches
    torch.nn.functional.interpolate(..., align_corners=True).
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    _, h, w = fm.shape
    if h < 2 or w < 2:
        raise ValueError("source map must be at least 2 x 2")
    out_h, out_w = target_resolution

    def src_coords(n_out, n_src):
        if n_out == 1:
            return np.zeros(1)
        return np.arange(n_out) * (n_src - 1) / (n_out - 1)

    ys = src_coords(out_h, h)
    xs = src_coords(out_w, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    tl = fm[:, y0[:, None], x0[None, :]]
    tr = fm[:, y0[:, None], x0[None, :] + 1]
    bl = fm[:, y0[:, None] + 1, x0[None, :]]
    br = fm[:, y0[:, None] + 1, x0[None, :] + 1]
    top = tl * (1 - wx) + tr * wx
    bottom = bl * (1 - wx) + br * wx
    return top * (1 - wy) + bottom * wy
