"""Planar homographies for registering the RGB, depth and pressure-mat planes.

Estimation is the normalized DLT (both point sets shifted to their centroid
and scaled to mean distance sqrt(2)) with an optional RANSAC wrapper.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pose import Plane, Pose

MM_PER_SENSEL = 5.08
PSM_SENSELS = 100
IMAGE_SIZE = 224


class DegenerateConfigurationError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


def _normalize_matrix(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    m = m / np.linalg.norm(m)
    pivot = m[2, 2] if abs(m[2, 2]) > 1e-15 else m.flat[np.argmax(np.abs(m))]
    return m if pivot > 0 else -m


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, Frobenius-normalized with a positive bottom-right entry."""

    matrix: np.ndarray
    src_plane: Plane | None = None
    dst_plane: Plane | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError(f"homography matrix must be a finite 3x3 array, got shape {m.shape}")
        m = _normalize_matrix(m)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateConfigurationError(f"homography is singular (det={np.linalg.det(m):.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix), self.dst_plane, self.src_plane)

    def compose(self, inner: "Homography") -> "Homography":
        """``self after inner``: points go through ``inner`` first."""
        return Homography(self.matrix @ inner.matrix, inner.src_plane, self.dst_plane)

    def __matmul__(self, inner: "Homography") -> "Homography":
        return self.compose(inner)

    @classmethod
    def identity(cls, src: Plane | None = None, dst: Plane | None = None) -> "Homography":
        return cls(np.eye(3), src, dst)

    @classmethod
    def scale(cls, s: float, src: Plane | None = None, dst: Plane | None = None) -> "Homography":
        return cls(np.diag([s, s, 1.0]), src, dst)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0, tx], [0, 1.0, ty], [0, 0, 1.0]]))


def apply_homography(H: Homography, points) -> np.ndarray:
    """Map (N, 2) points through ``H`` with the perspective divide."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ H.matrix.T
    w = hom[:, 2]
    bad = np.abs(w) < 1e-12
    if bad.any():
        raise ProjectionError(f"points {np.flatnonzero(bad).tolist()} map to the line at infinity")
    return hom[:, :2] / w[:, None]


def transfer_pose(pose: Pose, H: Homography, target_plane: Plane) -> Pose:
    """Carry all 14 joints through ``H`` into ``target_plane``, keeping joint order."""
    if H.src_plane is not None and pose.plane != H.src_plane:
        raise ValueError(f"pose is in plane {pose.plane.value} but homography maps from {H.src_plane.value}")
    if H.dst_plane is not None and target_plane != H.dst_plane:
        raise ValueError(f"homography maps to {H.dst_plane.value}, not {target_plane.value}")
    try:
        joints = apply_homography(H, pose.joints)
    except ProjectionError as e:
        raise ProjectionError(f"pose transfer failed: {e}") from None
    return pose.replace(joints=joints, plane=target_plane)


def _hartley(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _dlt_matrix(src, dst) -> np.ndarray:
    n = len(src)
    A = np.zeros((2 * n, 9))
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    A[0::2, 0], A[0::2, 1], A[0::2, 2] = -x, -y, -1
    A[0::2, 6], A[0::2, 7], A[0::2, 8] = u * x, u * y, u
    A[1::2, 3], A[1::2, 4], A[1::2, 5] = -x, -y, -1
    A[1::2, 6], A[1::2, 7], A[1::2, 8] = v * x, v * y, v
    return A


def estimate_homography(src, dst, src_plane: Plane | None = None, dst_plane: Plane | None = None) -> Homography:
    """Least-squares homography ``dst ~ H src`` by the normalized DLT."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError(f"point count mismatch: {len(src)} src vs {len(dst)} dst")
    if len(src) < 4:
        raise ValueError(f"need at least 4 correspondences, got {len(src)}")
    Ts, Td = _hartley(src), _hartley(dst)
    sn = (np.column_stack([src, np.ones(len(src))]) @ Ts.T)[:, :2]
    dn = (np.column_stack([dst, np.ones(len(dst))]) @ Td.T)[:, :2]
    _, sv, vt = np.linalg.svd(_dlt_matrix(sn, dn))
    # a unique solution needs a one-dimensional null space
    nullity = int(np.sum(sv < 1e-10 * sv[0])) + (9 - len(sv))
    if nullity > 1:
        raise DegenerateConfigurationError(
            f"rank-deficient DLT system (singular values {np.array2string(sv, precision=3)}); "
            "check for collinear or repeated points")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return Homography(H, src_plane, dst_plane)


def reprojection_errors(H: Homography, src, dst) -> np.ndarray:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    hom = np.column_stack([src, np.ones(len(src))]) @ H.matrix.T
    w = hom[:, 2]
    err = np.full(len(src), np.inf)
    ok = np.abs(w) >= 1e-12
    err[ok] = np.linalg.norm(hom[ok, :2] / w[ok, None] - dst[ok], axis=1)
    return err


def _collinear(p: np.ndarray, tol: float = 1e-9) -> bool:
    for i in range(4):
        q = np.delete(p, i, axis=0)
        a, b = q[1] - q[0], q[2] - q[0]
        scale = max(np.linalg.norm(a) * np.linalg.norm(b), 1e-300)
        if abs(a[0] * b[1] - a[1] * b[0]) / scale < tol:
            return True
    return False


def estimate_homography_ransac(src, dst, inlier_threshold: float = 1.0, iterations: int = 2000,
                               seed: int = 0, src_plane: Plane | None = None,
                               dst_plane: Plane | None = None) -> tuple[Homography, np.ndarray]:
    """Robust homography: best 4-point consensus, then a DLT refit on its inliers."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n != len(dst):
        raise ValueError(f"point count mismatch: {n} src vs {len(dst)} dst")
    if n < 4:
        raise ValueError(f"need at least 4 correspondences, got {n}")
    if inlier_threshold <= 0:
        raise ValueError(f"inlier_threshold must be positive, got {inlier_threshold}")
    rng = np.random.default_rng(seed)
    best_mask = None
    best_score = (0, -np.inf)
    for _ in range(iterations):
        pick = rng.choice(n, size=4, replace=False)
        if _collinear(src[pick]) or _collinear(dst[pick]):
            continue
        try:
            H = estimate_homography(src[pick], dst[pick])
        except (DegenerateConfigurationError, np.linalg.LinAlgError):
            continue
        err = reprojection_errors(H, src, dst)
        mask = err <= inlier_threshold
        score = (int(mask.sum()), -float(np.sum(err[mask] ** 2)))
        if score > best_score:
            best_score, best_mask = score, mask
            if score[0] == n:
                break
    if best_mask is None or best_score[0] < 4:
        raise DegenerateConfigurationError(f"RANSAC found no model with >= 4 inliers in {iterations} iterations")
    H = estimate_homography(src[best_mask], dst[best_mask], src_plane, dst_plane)
    mask = reprojection_errors(H, src, dst) <= inlier_threshold
    if mask.sum() >= 4 and not np.array_equal(mask, best_mask):
        H = estimate_homography(src[mask], dst[mask], src_plane, dst_plane)
        mask = reprojection_errors(H, src, dst) <= inlier_threshold
    return H, mask


@dataclass(frozen=True)
class LandmarkGrid:
    """Registration landmarks drawn on the mat: rows x cols points, ``spacing_mm`` apart."""

    rows: int = 6
    cols: int = 6
    spacing_mm: float = 90.0
    plane: Plane = Plane.PSM

    @property
    def spacing_sensels(self) -> float:
        return self.spacing_mm / MM_PER_SENSEL

    def psm_points(self) -> np.ndarray:
        """Grid points in sensel coordinates, centred on the 100 x 100 mat."""
        s = self.spacing_sensels
        ox = (PSM_SENSELS - (self.cols - 1) * s) / 2.0
        oy = (PSM_SENSELS - (self.rows - 1) * s) / 2.0
        yy, xx = np.mgrid[0:self.rows, 0:self.cols]
        return np.column_stack([ox + xx.ravel() * s, oy + yy.ravel() * s]).astype(np.float64)


def sensel_to_image() -> Homography:
    """Sensel units to the 224-pixel raster covering the same mat area."""
    return Homography.scale(IMAGE_SIZE / PSM_SENSELS, Plane.PSM, Plane.PSM)


def synthetic_camera_homography(seed: int, src: Plane = Plane.PSM, dst: Plane = Plane.RGB) -> Homography:
    """A plausible overhead-camera view of the mat: scale, small rotation, tilt, offset.

    Maps sensel coordinates to camera pixels. Used to produce the RGB/depth
    planes of synthetic registration sessions.
    """
    rng = np.random.default_rng(seed)
    s = rng.uniform(5.0, 7.0)
    th = np.deg2rad(rng.uniform(-5, 5))
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    A = np.eye(3)
    A[:2, :2] = s * R
    A[:2, 2] = [rng.uniform(300, 400), rng.uniform(50, 120)]
    A[2, :2] = rng.uniform(-4e-4, 4e-4, size=2)
    return Homography(A, src, dst)


def save_calibration(path, H: Homography, inlier_count: int, rms_error: float) -> None:
    record = {
        "src_plane": H.src_plane.value if H.src_plane else None,
        "dst_plane": H.dst_plane.value if H.dst_plane else None,
        "matrix": [float(v) for v in H.matrix.ravel()],
        "inlier_count": int(inlier_count),
        "rms_error": float(rms_error),
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


def load_calibration(path) -> tuple[Homography, dict]:
    record = json.loads(Path(path).read_text())
    missing = {"src_plane", "dst_plane", "matrix", "inlier_count", "rms_error"} - record.keys()
    if missing:
        raise ValueError(f"{path}: calibration missing fields {sorted(missing)}")
    if len(record["matrix"]) != 9:
        raise ValueError(f"{path}: matrix must hold 9 values")
    src = Plane(record["src_plane"]) if record["src_plane"] else None
    dst = Plane(record["dst_plane"]) if record["dst_plane"] else None
    return Homography(np.array(record["matrix"], dtype=np.float64).reshape(3, 3), src, dst), record
