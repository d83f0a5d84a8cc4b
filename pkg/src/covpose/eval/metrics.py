"""Keypoint accuracy (PCK) and localisation error in millimetres (NME)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..pose import N_JOINTS, Pose


@dataclass(frozen=True)
class MetricConfig:
    pck_threshold: float = 0.05
    norm_length: float = 100.0             # sensels, side of the mat
    mm_per_sensel: float = 5.08
    units_per_sensel_in_image: float = 224 / 100

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def threshold_sensels(self) -> float:
        return self.pck_threshold * self.norm_length

    @property
    def threshold_mm(self) -> float:
        return self.threshold_sensels * self.mm_per_sensel

    def to_dict(self) -> dict:
        return asdict(self)


def _joint_array(poses) -> np.ndarray:
    if isinstance(poses, np.ndarray):
        arr = np.asarray(poses, dtype=np.float64)
    else:
        arr = np.stack([p.joints if isinstance(p, Pose) else np.asarray(p, dtype=np.float64) for p in poses]) \
            if len(poses) else np.zeros((0, N_JOINTS, 2))
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"expected (n, joints, 2) coordinates, got shape {arr.shape}")
    return arr


def _aligned(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _joint_array(pred), _joint_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction and ground truth lists differ: {p.shape} vs {g.shape}")
    if p.shape[0] == 0:
        raise ValueError("no poses to evaluate")
    return p, g


def sensel_distances(pred, gt, cfg: MetricConfig = MetricConfig()) -> np.ndarray:
    """(n, joints) euclidean errors in sensels.

    This is the single place where image units are converted to mat units.
    """
    p, g = _aligned(pred, gt)
    dx = p[..., 0] - g[..., 0]
    dy = p[..., 1] - g[..., 1]
    return np.sqrt(dx * dx + dy * dy) / cfg.units_per_sensel_in_image


def _column_means(values: np.ndarray) -> np.ndarray:
    # correctly rounded sums keep results independent of summation order
    n = values.shape[0]
    return np.array([math.fsum(values[:, j]) / n for j in range(values.shape[1])])


def correct_mask(pred, gt, cfg: MetricConfig = MetricConfig()) -> np.ndarray:
    """(n, joints) booleans, distance within the threshold (inclusive)."""
    return sensel_distances(pred, gt, cfg) / cfg.norm_length <= cfg.pck_threshold


def pck(pred, gt, cfg: MetricConfig = MetricConfig()) -> tuple[np.ndarray, float]:
    """Per-joint percentage of correct keypoints and its mean over joints."""
    ok = correct_mask(pred, gt, cfg)
    per_joint = 100.0 * ok.sum(axis=0) / ok.shape[0]
    return per_joint, math.fsum(per_joint) / per_joint.size


def nme_mm(pred, gt, cfg: MetricConfig = MetricConfig()) -> tuple[np.ndarray, float]:
    """Per-joint mean error in mm and its mean over joints."""
    per_joint = _column_means(sensel_distances(pred, gt, cfg) * cfg.mm_per_sensel)
    return per_joint, math.fsum(per_joint) / per_joint.size
