"""Training-time augmentation and model-input preprocessing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..numerics import Tensor
from .types import DEPTH_RANGE_MM, IMAGE_SIZE, PRESSURE_MAX, Modality, Sample

CENTER = (IMAGE_SIZE - 1) / 2.0


@dataclass(frozen=True)
class AugmentPolicy:
    max_rotation_deg: float = 0.0
    max_scale: float = 0.0
    occlusion_prob: float = 0.0
    intensity_scale: float = 0.0
    hflip_prob: float = 0.0

    def __post_init__(self):
        for name in ("occlusion_prob", "hflip_prob", "max_scale", "intensity_scale"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be non-negative")


SLP_POLICY = AugmentPolicy(30.0, 0.25, 0.5, 0.2, 0.5)
SMAL_POLICY = AugmentPolicy(2.0, 0.0, 0.0, 0.0, 0.5)
NO_AUGMENT = AugmentPolicy()


def derive_seed(global_seed: int, sample_index: int, epoch: int) -> int:
    return int(np.random.SeedSequence([global_seed, sample_index, epoch]).generate_state(1)[0])


def _warp(img: np.ndarray, A: np.ndarray) -> np.ndarray:
    # A maps source (x, y) offsets from the centre to destination offsets
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    inv = np.linalg.inv(P @ A @ P)
    c = np.array([CENTER, CENTER])
    out = ndimage.affine_transform(img.astype(np.float64), inv, offset=c - inv @ c, order=1,
                                   mode="constant", cval=0.0)
    return out.astype(img.dtype)


def augment(sample: Sample, policy: AugmentPolicy, rng_seed: int) -> Sample:
    """Random flip, rotation/scale about the centre, occlusion and intensity scaling.

    Every random draw happens regardless of the policy so a seed yields the same
    stream for any policy. Joints pushed outside the image are clamped and flagged.
    """
    rng = np.random.default_rng(rng_seed)
    u_flip = rng.uniform()
    angle = rng.uniform(-1.0, 1.0) * policy.max_rotation_deg
    scale = 1.0 + rng.uniform(-1.0, 1.0) * policy.max_scale
    u_occ = rng.uniform()
    occ_area = rng.uniform(0.10, 0.25)
    occ_aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
    occ_pos = rng.uniform(size=2)
    gains = 1.0 + rng.uniform(-1.0, 1.0, size=2) * policy.intensity_scale

    depth, pressure, pose = sample.depth, sample.pressure, sample.pose
    if u_flip < policy.hflip_prob:
        depth, pressure = depth[:, ::-1], pressure[:, ::-1]
        pose = pose.hflip(IMAGE_SIZE)
    if angle != 0.0 or scale != 1.0:
        t = np.deg2rad(angle)
        A = scale * np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        depth, pressure = _warp(depth, A), _warp(pressure, A)
        moved = (pose.joints - CENTER) @ A.T + CENTER
        hi = np.nextafter(IMAGE_SIZE, 0)
        out = np.any((moved < 0) | (moved > hi), axis=1)
        pose = pose.replace(joints=np.clip(moved, 0.0, hi), flags=pose.flags | out)
    if u_occ < policy.occlusion_prob:
        area = occ_area * IMAGE_SIZE * IMAGE_SIZE
        w = int(round(min(IMAGE_SIZE, np.sqrt(area * occ_aspect))))
        h = int(round(min(IMAGE_SIZE, area / max(w, 1))))
        x0 = int(occ_pos[0] * (IMAGE_SIZE - w + 1))
        y0 = int(occ_pos[1] * (IMAGE_SIZE - h + 1))
        depth, pressure = np.array(depth), np.array(pressure)
        depth[y0:y0 + h, x0:x0 + w] = 0
        pressure[y0:y0 + h, x0:x0 + w] = 0
    if policy.intensity_scale > 0:
        depth = depth * np.float32(gains[0])
        pressure = np.clip(pressure * np.float32(gains[1]), 0.0, PRESSURE_MAX)
    return sample.with_rasters(np.ascontiguousarray(depth, dtype=np.float32),
                               np.ascontiguousarray(pressure, dtype=np.float32), pose)


def preprocess_array(sample: Sample, modality: Modality = Modality.BOTH) -> np.ndarray:
    """(224, 224, 3) float32 input with channels [depth, depth, pressure] scaled to [0, 1]."""
    modality = Modality(modality)
    out = np.empty(sample.depth.shape + (3,), dtype=np.float32)
    d = np.clip(sample.depth / DEPTH_RANGE_MM, 0.0, 1.0)
    out[..., 0] = d
    out[..., 1] = d
    out[..., 2] = np.clip(sample.pressure / PRESSURE_MAX, 0.0, 1.0)
    if modality == Modality.DEPTH_ONLY:
        out[..., 2] = 0.0
    elif modality == Modality.PSM_ONLY:
        out[..., :2] = 0.0
    return out


def preprocess(sample: Sample, modality: Modality = Modality.BOTH) -> Tensor:
    return Tensor(preprocess_array(sample, modality))
