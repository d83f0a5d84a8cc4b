"""Deterministic synthetic depth + pressure samples.

A pose is a kinematic skeleton laid on the mattress. Rendering turns it into a
heightfield of capsule-shaped body parts (the depth raster, in mm above the
mattress), drapes a cover over it, and integrates contact pressure from the
parts resting on the mat at 100 x 100 sensel resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..pose import J, Plane, Pose
from .types import IMAGE_SIZE, PRESSURE_MAX, Category, Cover, Dataset, Sample, Source

GENERATOR_VERSION = "1"
PSM_GRID = 100


@dataclass(frozen=True)
class BodyProfile:
    """Segment lengths and part radii in mm; ``field_mm`` is the mat side covered by the raster."""

    name: str
    field_mm: float
    head: float
    torso: float
    shoulder_half: float
    hip_half: float
    upper_arm: float
    forearm: float
    thigh: float
    shank: float
    r_head: float
    r_torso: float
    r_upper_arm: float
    r_forearm: float
    r_thigh: float
    r_shank: float
    density: float  # pressure scale, N/cm^2 at full contact under the torso

    @property
    def px_per_mm(self) -> float:
        return IMAGE_SIZE / self.field_mm


# newborn, 50 cm crown to heel, on the 50.8 cm mat
INFANT = BodyProfile("infant", 508.0, head=95, torso=150, shoulder_half=50, hip_half=34,
                     upper_arm=70, forearm=62, thigh=88, shank=84,
                     r_head=42, r_torso=52, r_upper_arm=17, r_forearm=14, r_thigh=24, r_shank=18,
                     density=0.9)


def _adult() -> BodyProfile:
    k = 2.4
    return BodyProfile("adult", 508.0 * k, head=0.8 * 95 * k, torso=150 * k, shoulder_half=52 * k,
                       hip_half=36 * k, upper_arm=1.1 * 70 * k, forearm=1.1 * 62 * k, thigh=1.2 * 88 * k,
                       shank=1.15 * 84 * k, r_head=0.8 * 42 * k, r_torso=0.9 * 52 * k, r_upper_arm=17 * k,
                       r_forearm=14 * k, r_thigh=26 * k, r_shank=19 * k, density=1.6)


ADULT = _adult()

PROFILE_FOR_SOURCE = {Source.SMAL_LIKE: INFANT, Source.SLP_LIKE: ADULT, Source.SYNTH_SIM: ADULT}

# renderer constants
CONTACT_MM = 8.0          # parts lifted more than this leave no pressure
DEPTH_NOISE_MM = 1.0
PRESSURE_NOISE = 0.04     # multiplicative
THIN_SIGMA_PX, THIN_MM = 1.5, 1.0
THICK_SIGMA_PX, THICK_DILATE_PX, THICK_MM = 3.0, 9, 5.0

# generator angle bounds (degrees)
MAX_TILT = 25.0
SUPINE_WIDTH = (0.85, 1.0)
SIDE_WIDTH = (0.25, 0.45)


def _rot(d: np.ndarray, deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]])


def _skeleton(category: Category, rng: np.random.Generator, prof: BodyProfile) -> tuple[np.ndarray, np.ndarray]:
    """Joints (mm, mat frame) and elevations for one random draw."""
    tilt = rng.uniform(-MAX_TILT, MAX_TILT)
    up = _rot(np.array([0.0, -1.0]), tilt)      # pelvis -> head
    lat = np.array([-up[1], up[0]])              # image-right when upright
    down = -up
    supine = category == Category.SUPINE
    side = 0.0 if supine else (1.0 if category == Category.LEFT else -1.0)
    width = rng.uniform(*(SUPINE_WIDTH if supine else SIDE_WIDTH))
    # the subject's right side appears at -lat seen from above
    anchor = np.array([rng.uniform(0.4, 0.6), rng.uniform(0.3, 0.42)]) * prof.field_mm
    joints = np.zeros((14, 2))
    elev = np.zeros(14)
    thorax = anchor + side * lat * rng.uniform(0, 0.04) * prof.field_mm
    pelvis = thorax + down * prof.torso
    joints[J["Thorax"]] = thorax
    joints[J["Head-Top"]] = thorax + _rot(up, rng.uniform(-15, 15) + side * rng.uniform(0, 20)) * prof.head
    joints[J["Shoulder-R"]] = thorax - lat * prof.shoulder_half * width
    joints[J["Shoulder-L"]] = thorax + lat * prof.shoulder_half * width
    joints[J["Hip-R"]] = pelvis - lat * prof.hip_half * width
    joints[J["Hip-L"]] = pelvis + lat * prof.hip_half * width
    body_h = prof.r_torso * 1.1
    if not supine:
        # upper side of the body rests on the lower side
        top = "L" if side < 0 else "R"
        for name in ("Shoulder", "Hip"):
            elev[J[f"{name}-{top}"]] = body_h

    def limb(root: str, mid: str, end: str, l1: float, l2: float, s: float, abduct, bend):
        # s = -1 right limb, +1 left limb; angle measured from `down` toward the outward side
        if supine:
            a = s * rng.uniform(*abduct)
        else:
            a = side * rng.uniform(abduct[0] + 10, abduct[1] + 20)
        d1 = _rot(down, -a)
        b = rng.uniform(-bend, bend) if supine else side * rng.uniform(0, bend)
        d2 = _rot(d1, -b)
        joints[J[mid]] = joints[J[root]] + d1 * l1
        joints[J[end]] = joints[J[mid]] + d2 * l2

    for s, tag in ((-1.0, "R"), (1.0, "L")):
        limb(f"Shoulder-{tag}", f"Elbow-{tag}", f"Wrist-{tag}", prof.upper_arm, prof.forearm, s, (15, 140), 120)
        limb(f"Hip-{tag}", f"Knee-{tag}", f"Ankle-{tag}", prof.thigh, prof.shank, s, (-5, 35), 80)

    for tag in ("R", "L"):
        if supine and rng.uniform() < 0.15:
            # arm held up off the mattress
            elev[J[f"Elbow-{tag}"]] = rng.uniform(2.5, 4.0) * CONTACT_MM
            elev[J[f"Wrist-{tag}"]] = rng.uniform(6.0, 10.0) * CONTACT_MM
        if supine and rng.uniform() < 0.1:
            elev[J[f"Knee-{tag}"]] = rng.uniform(3.0, 6.0) * CONTACT_MM
    if not supine:
        top = "L" if side < 0 else "R"
        for name in ("Elbow", "Wrist", "Knee", "Ankle"):
            elev[J[f"{name}-{top}"]] = body_h * rng.uniform(0.3, 0.9)
    return joints, elev


def generate_pose(category: Category, rng_seed: int, profile: BodyProfile = INFANT) -> Pose:
    """Random plausible lying pose in the 224-pixel mat frame; all joints inside the image."""
    category = Category(category)
    rng = np.random.default_rng(rng_seed)
    for _ in range(1000):
        joints_mm, elev = _skeleton(category, rng, profile)
        # dyadic grid keeps mirroring (223 - x) exact in floating point
        px = np.round(joints_mm * profile.px_per_mm * 256.0) / 256.0
        if np.all(px >= 0) and np.all(px < IMAGE_SIZE):
            return Pose(px, Plane.PSM, elev)
    raise RuntimeError(f"no in-bounds {category.value} pose after 1000 draws (seed {rng_seed})")


def _parts(pose: Pose, prof: BodyProfile):
    """Capsules as (a_px, b_px, radius_mm, elev_a_mm, elev_b_mm, density weight)."""
    j = pose.joints
    e = pose.elevation if pose.elevation is not None else np.zeros(14)
    k = J
    mid_sh = 0.5 * (j[k["Shoulder-R"]] + j[k["Shoulder-L"]])
    mid_hip = 0.5 * (j[k["Hip-R"]] + j[k["Hip-L"]])
    head_c = j[k["Thorax"]] + 0.6 * (j[k["Head-Top"]] - j[k["Thorax"]])
    parts = [
        (mid_sh, mid_hip, prof.r_torso, 0.0, 0.0, 1.0),
        (j[k["Shoulder-R"]], j[k["Shoulder-L"]], prof.r_upper_arm * 1.2, e[k["Shoulder-R"]], e[k["Shoulder-L"]], 0.6),
        (j[k["Hip-R"]], j[k["Hip-L"]], prof.r_thigh, e[k["Hip-R"]], e[k["Hip-L"]], 0.8),
        (head_c, head_c, prof.r_head, 0.0, 0.0, 0.7),
    ]
    for tag in ("R", "L"):
        for a, b, r, w in (("Shoulder", "Elbow", prof.r_upper_arm, 0.5), ("Elbow", "Wrist", prof.r_forearm, 0.45),
                           ("Hip", "Knee", prof.r_thigh, 0.7), ("Knee", "Ankle", prof.r_shank, 0.55)):
            ia, ib = k[f"{a}-{tag}"], k[f"{b}-{tag}"]
            parts.append((j[ia], j[ib], r, e[ia], e[ib], w))
    return parts


def _segment_field(shape, a, b, r, step: float):
    """Distance to segment ab and projection parameter on a pixel grid (bbox-limited)."""
    lo = np.floor(np.minimum(a, b) - r - 1).astype(int)
    hi = np.ceil(np.maximum(a, b) + r + 1).astype(int)
    x0, y0 = max(lo[0], 0), max(lo[1], 0)
    x1, y1 = min(hi[0], shape[1]), min(hi[1], shape[0])
    if x0 >= x1 or y0 >= y1:
        return None
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px = (xs + 0.5) * step
    py = (ys + 0.5) * step
    ab = b - a
    L2 = float(ab @ ab)
    t = np.zeros_like(px) if L2 < 1e-12 else np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / L2, 0, 1)
    dx = px - (a[0] + t * ab[0])
    dy = py - (a[1] + t * ab[1])
    return (slice(y0, y1), slice(x0, x1)), np.sqrt(dx * dx + dy * dy), t


def heightfield(pose: Pose, profile: BodyProfile = INFANT) -> np.ndarray:
    """Uncovered body surface height above the mattress, mm, on the 224 grid."""
    h = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    s = profile.px_per_mm
    for a, b, r_mm, ea, eb, _ in _parts(pose, profile):
        r = r_mm * s
        f = _segment_field(h.shape, a, b, r, 1.0)
        if f is None:
            continue
        sl, d, t = f
        inside = d < r
        zc = ea + (eb - ea) * t + r_mm
        surf = np.where(inside, zc + np.sqrt(np.maximum(r * r - d * d, 0)) / s, 0.0)
        h[sl] = np.maximum(h[sl], surf)
    return h


def pressure_map(pose: Pose, profile: BodyProfile = INFANT) -> np.ndarray:
    """Contact pressure on the 100 x 100 sensel grid (noise-free, N/cm^2)."""
    p = np.zeros((PSM_GRID, PSM_GRID))
    step = IMAGE_SIZE / PSM_GRID        # image px per sensel
    s = profile.px_per_mm
    for a, b, r_mm, ea, eb, w in _parts(pose, profile):
        r = r_mm * s
        f = _segment_field(p.shape, a / step, b / step, r / step, 1.0)
        if f is None:
            continue
        sl, d, t = f
        lift = ea + (eb - ea) * t
        contact = np.clip(1.0 - lift / CONTACT_MM, 0.0, 1.0)
        prof = np.sqrt(np.clip(1.0 - (d * step / r) ** 2, 0.0, 1.0))
        p[sl] += profile.density * w * contact * prof
    return p


def render_sample(pose: Pose, cover: Cover, rng_seed: int, profile: BodyProfile = INFANT,
                  category: Category = Category.SUPINE, pose_id: int = 0) -> Sample:
    """Depth (mm above mattress) and pressure rasters for one pose under one cover.

    The cover changes only the depth raster. Pressure noise is seeded by
    ``rng_seed`` alone so the three cover variants share one pressure image.
    """
    cover = Cover(cover)
    if pose.plane != Plane.PSM or np.any(pose.joints < 0) or np.any(pose.joints >= IMAGE_SIZE):
        raise ValueError("render_sample needs an in-bounds pose in the PSM plane")
    h = heightfield(pose, profile)
    if cover == Cover.THIN:
        h = ndimage.gaussian_filter(h, THIN_SIGMA_PX, mode="constant") + THIN_MM
    elif cover == Cover.THICK:
        h = ndimage.gaussian_filter(ndimage.maximum_filter(h, size=THICK_DILATE_PX, mode="constant"),
                                    THICK_SIGMA_PX, mode="constant") + THICK_MM
    cover_code = {Cover.UNCOVERED: 0, Cover.THIN: 1, Cover.THICK: 2}[cover]
    depth_rng = np.random.default_rng([rng_seed, 1, cover_code])
    depth = h + depth_rng.normal(0.0, DEPTH_NOISE_MM, h.shape)
    depth = np.maximum(depth, 0.0).astype(np.float32)

    p = pressure_map(pose, profile)
    p_rng = np.random.default_rng([rng_seed, 2])
    p = p * (1.0 + PRESSURE_NOISE * p_rng.standard_normal(p.shape))
    p = ndimage.zoom(p, IMAGE_SIZE / PSM_GRID, order=1, grid_mode=True, mode="nearest")
    pressure = np.clip(p, 0.0, PRESSURE_MAX).astype(np.float32)
    return Sample(pose, cover, category, pose_id, depth, pressure)


def _pose_seeds(seed: int, pose_id: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence([seed, pose_id]).generate_state(2)
    return int(a), int(b)


def generate_dataset(n_poses: int, seed: int, source_tag: Source = Source.SMAL_LIKE,
                     profile: BodyProfile | None = None) -> Dataset:
    """``n_poses`` poses (equal thirds per posture category), each under all three covers.

    Rasters render lazily on first access; results depend only on ``seed``.
    """
    source_tag = Source(source_tag)
    if n_poses <= 0 or n_poses % 3:
        raise ValueError(f"n_poses must be a positive multiple of 3, got {n_poses}")
    prof = profile or PROFILE_FOR_SOURCE[source_tag]
    cats = list(Category)
    samples = []
    for pid in range(n_poses):
        cat = cats[pid % 3]
        pose_seed, render_seed = _pose_seeds(seed, pid)
        pose = generate_pose(cat, pose_seed, prof)
        for cover in Cover:
            samples.append(Sample(pose, cover, cat, pid, loader=_Renderer(pose, cover, render_seed, prof, cat, pid)))
    manifest = {"seed": int(seed), "generator_version": GENERATOR_VERSION, "profile": prof.name,
                "n_poses": int(n_poses)}
    return Dataset(tuple(samples), source_tag, manifest)


class _Renderer:
    __slots__ = ("args",)

    def __init__(self, *args):
        self.args = args

    def __call__(self):
        pose, cover, seed, prof, cat, pid = self.args
        s = render_sample(pose, cover, seed, prof, cat, pid)
        return s.depth, s.pressure
