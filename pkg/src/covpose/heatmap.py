"""Gaussian heatmap targets and argmax decoding.

Heatmap cell ``i`` covers input pixels ``[4i, 4i + 4)``. A joint is encoded as
a unit-peak Gaussian centred on the cell that contains it, and a channel is
decoded to the centre of its argmax cell, so the round-trip error is at most
half a cell (2 px) per axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pose import N_JOINTS, Plane, Pose

HEATMAP_SIZE = 56
DOWNSAMPLE = 4
SIGMA = 1.0


@dataclass(frozen=True, eq=False)
class HeatmapStack:
    """(size, size, joints) maps, channel order = joint order; ``flags`` marks clamped or flat channels."""

    maps: np.ndarray
    downsample: int = DOWNSAMPLE
    sigma: float = SIGMA
    flags: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.maps.shape[0]


def joint_cells(joints: np.ndarray, size: int = HEATMAP_SIZE, downsample: int = DOWNSAMPLE):
    """Integer (col, row) cell per joint, clamped to the grid, plus a clamped flag."""
    cells = np.floor(np.asarray(joints, dtype=np.float64) / downsample).astype(np.int64)
    clamped = np.any((cells < 0) | (cells >= size), axis=1)
    return np.clip(cells, 0, size - 1), clamped


def encode(pose: Pose, size: int = HEATMAP_SIZE, sigma: float = SIGMA, downsample: int = DOWNSAMPLE,
           dtype=np.float32) -> HeatmapStack:
    cells, clamped = joint_cells(pose.joints, size, downsample)
    grid = np.arange(size, dtype=np.float64)
    gx = np.exp(-((grid[None, :] - cells[:, 0:1]) ** 2) / (2 * sigma * sigma))   # (J, size)
    gy = np.exp(-((grid[None, :] - cells[:, 1:2]) ** 2) / (2 * sigma * sigma))
    maps = np.einsum("jy,jx->yxj", gy, gx).astype(dtype)
    return HeatmapStack(maps, downsample, sigma, clamped | pose.flags)


def encode_batch(poses, size: int = HEATMAP_SIZE, sigma: float = SIGMA, downsample: int = DOWNSAMPLE) -> np.ndarray:
    return np.stack([encode(p, size, sigma, downsample).maps for p in poses])


def decode_array(maps: np.ndarray, downsample: int = DOWNSAMPLE) -> tuple[np.ndarray, np.ndarray]:
    """(..., size, size, J) maps -> (..., J, 2) coordinates and (..., J) low-confidence flags."""
    maps = np.asarray(maps)
    if not np.all(np.isfinite(maps)):
        raise ValueError("heatmaps contain non-finite values")
    *lead, h, w, nj = maps.shape
    flat = np.moveaxis(maps, -1, -3).reshape(*lead, nj, h * w)
    idx = np.argmax(flat, axis=-1)
    flat_chan = flat.max(axis=-1) <= flat.min(axis=-1)
    coords = np.stack([(idx % w + 0.5) * downsample, (idx // w + 0.5) * downsample], axis=-1).astype(np.float64)
    center = np.array([w * downsample / 2.0, h * downsample / 2.0])
    coords = np.where(flat_chan[..., None], center, coords)
    return coords, flat_chan


def decode(stack: HeatmapStack) -> Pose:
    if stack.maps.ndim != 3 or stack.maps.shape[2] != N_JOINTS:
        raise ValueError(f"expected (size, size, {N_JOINTS}) maps, got {stack.maps.shape}")
    coords, low = decode_array(stack.maps, stack.downsample)
    return Pose(coords, Plane.PSM, flags=low)
