"""Cross-validation folds and train/val/test assembly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import COVERED, Dataset, Sample


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint pose_id folds; ``test_fold`` may be None for a train/val holdout."""

    folds: tuple[tuple[int, ...], ...]
    val_fold: int
    test_fold: int | None = None

    def __post_init__(self):
        k = len(self.folds)
        if not 0 <= self.val_fold < k:
            raise ValueError(f"val_fold {self.val_fold} out of range for {k} folds")
        if self.test_fold is not None and (not 0 <= self.test_fold < k or self.test_fold == self.val_fold):
            raise ValueError(f"test_fold {self.test_fold} must differ from val_fold and lie in [0, {k})")
        seen: set[int] = set()
        for f in self.folds:
            if seen & set(f):
                raise ValueError("folds overlap")
            seen |= set(f)

    def with_rotation(self, test_fold: int) -> "SplitPlan":
        """Test on ``test_fold``, validate on the next fold (mod k)."""
        k = len(self.folds)
        return SplitPlan(self.folds, (test_fold + 1) % k, test_fold)

    @property
    def train_ids(self) -> tuple[int, ...]:
        skip = {self.val_fold, self.test_fold}
        return tuple(sorted(i for n, f in enumerate(self.folds) if n not in skip for i in f))


def make_folds(dataset: Dataset, k: int = 5, seed: int = 0) -> tuple[tuple[int, ...], ...]:
    """Category-stratified partition of pose_ids into ``k`` equal folds."""
    ids = dataset.pose_ids
    if k < 2 or len(ids) % k:
        raise ValueError(f"{len(ids)} pose_ids cannot be split into {k} equal folds")
    cat = dataset.category_of()
    rng = np.random.default_rng(seed)
    order = []
    for c in sorted({v.value for v in cat.values()}):
        members = np.array([i for i in ids if cat[i].value == c])
        order.extend(rng.permutation(members).tolist())
    folds = [[] for _ in range(k)]
    for pos, pid in enumerate(order):
        folds[pos % k].append(int(pid))
    return tuple(tuple(sorted(f)) for f in folds)


def make_holdout(dataset: Dataset, n_train: int, seed: int = 0) -> SplitPlan:
    """Two-fold plan: ``n_train`` pose_ids for training, the rest for validation."""
    ids = dataset.pose_ids
    if not 0 < n_train < len(ids):
        raise ValueError(f"n_train must lie in (0, {len(ids)}), got {n_train}")
    perm = np.random.default_rng(seed).permutation(ids)
    return SplitPlan((tuple(sorted(perm[:n_train].tolist())), tuple(sorted(perm[n_train:].tolist()))), val_fold=1)


def assemble_split(dataset: Dataset, plan: SplitPlan) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Train on every cover of the training folds; validate and test on covered samples only."""
    train_ids = set(plan.train_ids)
    val_ids = set(plan.folds[plan.val_fold])
    test_ids = set(plan.folds[plan.test_fold]) if plan.test_fold is not None else set()
    if train_ids & val_ids or train_ids & test_ids or val_ids & test_ids:
        raise AssertionError("split plan leaks pose_ids across train/val/test")
    train, val, test = [], [], []
    for s in dataset.samples:
        if s.pose_id in train_ids:
            train.append(s)
        elif s.cover in COVERED:
            if s.pose_id in val_ids:
                val.append(s)
            elif s.pose_id in test_ids:
                test.append(s)
    return train, val, test
