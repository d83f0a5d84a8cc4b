"""Coordinate planes and the 14-joint pose type shared by every module."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class Plane(str, Enum):
    RGB = "RGB"
    DEPTH = "DEPTH"
    PSM = "PSM"


JOINT_NAMES = (
    "Ankle-R", "Knee-R", "Hip-R", "Hip-L", "Knee-L", "Ankle-L",
    "Wrist-R", "Elbow-R", "Shoulder-R", "Shoulder-L", "Elbow-L", "Wrist-L",
    "Thorax", "Head-Top",
)
N_JOINTS = len(JOINT_NAMES)
J = {name: i for i, name in enumerate(JOINT_NAMES)}

# left/right partner of each joint; Thorax and Head-Top map to themselves
FLIP_PERMUTATION = np.array([5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6, 12, 13])

# limb chains for drawing: ankle-knee-hip, wrist-elbow-shoulder, hips/shoulders to thorax to head
SKELETON_EDGES = (
    (0, 1), (1, 2), (5, 4), (4, 3),
    (6, 7), (7, 8), (11, 10), (10, 9),
    (2, 12), (3, 12), (8, 12), (9, 12), (12, 13),
)


@dataclass(frozen=True, eq=False)
class Pose:
    """Ordered 14 (x, y) joints in one coordinate plane.

    ``elevation`` (mm above the mattress, per joint) is generator metadata used
    when rendering; ``flags`` marks joints that were clamped or decoded with low
    confidence.
    """

    joints: np.ndarray
    plane: Plane = Plane.PSM
    elevation: np.ndarray | None = None
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        j = np.array(self.joints, dtype=np.float64).reshape(-1, 2)
        if j.shape != (N_JOINTS, 2):
            raise ValueError(f"pose needs {N_JOINTS} joints, got {j.shape[0]}")
        if not np.all(np.isfinite(j)):
            raise ValueError("pose coordinates must be finite")
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "plane", Plane(self.plane))
        if self.elevation is not None:
            e = np.array(self.elevation, dtype=np.float64).reshape(N_JOINTS)
            e.setflags(write=False)
            object.__setattr__(self, "elevation", e)
        f = np.zeros(N_JOINTS, dtype=bool) if self.flags is None else np.array(self.flags, dtype=bool).reshape(N_JOINTS)
        f.setflags(write=False)
        object.__setattr__(self, "flags", f)

    def replace(self, **changes) -> "Pose":
        return replace(self, **changes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        same_elev = (self.elevation is None and other.elevation is None) or (
            self.elevation is not None and other.elevation is not None
            and np.array_equal(self.elevation, other.elevation))
        return (self.plane == other.plane and np.array_equal(self.joints, other.joints)
                and same_elev and np.array_equal(self.flags, other.flags))

    __hash__ = None

    def hflip(self, width: int = 224) -> "Pose":
        """Mirror ``x -> (width - 1) - x`` and swap left/right joints."""
        j = self.joints.copy()
        j[:, 0] = (width - 1) - j[:, 0]
        elev = None if self.elevation is None else self.elevation[FLIP_PERMUTATION]
        return Pose(j[FLIP_PERMUTATION], self.plane, elev, self.flags[FLIP_PERMUTATION])
