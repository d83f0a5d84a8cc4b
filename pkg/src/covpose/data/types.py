from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from ..pose import Pose

IMAGE_SIZE = 224
PRESSURE_MAX = 3.41  # N/cm^2, top of the mat's range
DEPTH_RANGE_MM = 300.0


class Cover(str, Enum):
    UNCOVERED = "UNCOVERED"
    THIN = "THIN"
    THICK = "THICK"


COVERED = (Cover.THIN, Cover.THICK)


class Category(str, Enum):
    SUPINE = "SUPINE"
    LEFT = "LEFT"
    RIGHT = "RIGHT"


class Source(str, Enum):
    SMAL_LIKE = "SMAL_LIKE"
    SLP_LIKE = "SLP_LIKE"
    SYNTH_SIM = "SYNTH_SIM"


class Modality(str, Enum):
    BOTH = "BOTH"
    DEPTH_ONLY = "DEPTH_ONLY"
    PSM_ONLY = "PSM_ONLY"


class Sample:
    """Aligned height (mm above the mattress) and pressure rasters with labels.

    Rasters may be supplied directly or produced on first access by ``loader``;
    either way they are cached and never mutated.
    """

    __slots__ = ("pose", "cover", "category", "pose_id", "_depth", "_pressure", "_loader")

    def __init__(self, pose: Pose, cover: Cover, category: Category, pose_id: int,
                 depth: np.ndarray | None = None, pressure: np.ndarray | None = None,
                 loader: Callable[[], tuple[np.ndarray, np.ndarray]] | None = None):
        if (depth is None or pressure is None) and loader is None:
            raise ValueError("sample needs rasters or a loader")
        self.pose = pose
        self.cover = Cover(cover)
        self.category = Category(category)
        self.pose_id = int(pose_id)
        self._depth = depth
        self._pressure = pressure
        self._loader = loader
        if depth is not None:
            self._check(depth, pressure)

    @staticmethod
    def _check(depth, pressure):
        if depth.shape != pressure.shape:
            raise ValueError(f"depth {depth.shape} and pressure {pressure.shape} rasters are not aligned")
        if pressure.min() < 0 or pressure.max() > PRESSURE_MAX:
            raise ValueError(f"pressure outside [0, {PRESSURE_MAX}]")
        depth.setflags(write=False)
        pressure.setflags(write=False)

    def _materialize(self):
        d, p = self._loader()
        self._check(d, p)
        self._depth, self._pressure = d, p

    @property
    def depth(self) -> np.ndarray:
        if self._depth is None:
            self._materialize()
        return self._depth

    @property
    def pressure(self) -> np.ndarray:
        if self._pressure is None:
            self._materialize()
        return self._pressure

    def with_rasters(self, depth: np.ndarray, pressure: np.ndarray, pose: Pose | None = None) -> "Sample":
        return Sample(pose if pose is not None else self.pose, self.cover, self.category, self.pose_id, depth, pressure)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.pose_id == other.pose_id and self.cover == other.cover and self.category == other.category
                and self.pose == other.pose and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.pressure, other.pressure))

    __hash__ = None

    def __repr__(self) -> str:
        return f"Sample(pose_id={self.pose_id}, cover={self.cover.value}, category={self.category.value})"


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    source: Source
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "source", Source(self.source))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.source == other.source and self.manifest == other.manifest
                and len(self) == len(other) and all(a == b for a, b in zip(self.samples, other.samples)))

    __hash__ = None

    @property
    def pose_ids(self) -> np.ndarray:
        return np.array(sorted({s.pose_id for s in self.samples}), dtype=np.int64)

    def category_of(self) -> dict[int, Category]:
        return {s.pose_id: s.category for s in self.samples}

    def check_cover_triples(self) -> None:
        """Every pose_id carries all three covers with an identical pose."""
        groups: dict[int, list[Sample]] = {}
        for s in self.samples:
            groups.setdefault(s.pose_id, []).append(s)
        for pid, group in groups.items():
            covers = sorted(s.cover.value for s in group)
            if covers != sorted(c.value for c in Cover):
                raise ValueError(f"pose_id {pid}: cover set {covers} is not a complete triple")
            if any(not np.array_equal(group[0].pose.joints, s.pose.joints) for s in group[1:]):
                raise ValueError(f"pose_id {pid}: cover variants disagree on the pose")
