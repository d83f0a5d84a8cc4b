"""Training presets and pretraining stage plans."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from enum import Enum

from ..data.augment import NO_AUGMENT, SLP_POLICY, SMAL_POLICY, AugmentPolicy
from ..model.config import MaeConfig, ViTConfig

EARLY_STOP_METRIC = "mean validation PCK"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    base_lr: float
    epochs: int
    warmup: int
    policy: AugmentPolicy = NO_AUGMENT
    seed: int = 0
    weight_decay: float = 0.05

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.warmup < 0:
            raise ValueError(f"invalid batch/epoch settings: {self.batch_size}, {self.epochs}, {self.warmup}")
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")

    @property
    def early_stop_metric(self) -> str:
        return EARLY_STOP_METRIC

    @classmethod
    def slp(cls, seed: int = 0) -> "TrainConfig":
        return cls(256, 1e-3, 50, 5, SLP_POLICY, seed)

    @classmethod
    def smal(cls, seed: int = 0) -> "TrainConfig":
        return cls(16, 1e-4, 50, 5, SMAL_POLICY, seed)

    @classmethod
    def slp_desk(cls, seed: int = 0) -> "TrainConfig":
        """SLP stage with batch 32; the learning rate keeps its ratio to the batch size."""
        return cls(32, 1e-3 * 32 / 256, 50, 5, SLP_POLICY, seed)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["early_stop_metric"] = EARLY_STOP_METRIC
        return d


@dataclass(frozen=True)
class PretrainConfig:
    vit: ViTConfig
    mae: MaeConfig
    batch_size: int = 32
    base_lr: float = 1e-3
    warmup: int = 2
    weight_decay: float = 0.05
    holdout_fraction: float = 0.1

    @classmethod
    def tiny(cls, **changes) -> "PretrainConfig":
        return replace(cls(ViTConfig.tiny(), MaeConfig.tiny()), **changes)

    def to_dict(self) -> dict:
        return {"vit": self.vit.to_dict(), "mae": self.mae.to_dict(), "batch_size": self.batch_size,
                "base_lr": self.base_lr, "warmup": self.warmup, "weight_decay": self.weight_decay,
                "holdout_fraction": self.holdout_fraction}


class Variant(str, Enum):
    BASELINE = "BASELINE"
    S = "S"
    R = "R"
    B = "B"


# corpus key and lineage tag of every pretraining stage, in execution order
VARIANT_STAGES = {
    Variant.BASELINE: (),
    Variant.S: (("simulated", "MAE-sim"),),
    Variant.R: (("real", "MAE-real"),),
    Variant.B: (("simulated", "MAE-sim"), ("real", "MAE-real")),
}


@dataclass(frozen=True)
class StagePlan:
    variant: Variant
    epochs_per_stage: int = 150

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.epochs_per_stage < 0:
            raise ValueError(f"epochs_per_stage must be non-negative, got {self.epochs_per_stage}")

    @property
    def stages(self) -> tuple[tuple[str, str], ...]:
        return VARIANT_STAGES[self.variant]

    def scaled(self, factor: float) -> "StagePlan":
        """Shrink every stage by one global factor (150 -> 15 at factor 1/10)."""
        return StagePlan(self.variant, int(round(self.epochs_per_stage * factor)))

    def label(self) -> str:
        return "Base" if self.variant == Variant.BASELINE else f"{self.variant.value}-{self.epochs_per_stage}"

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "epochs_per_stage": self.epochs_per_stage,
                "stages": [tag for _, tag in self.stages]}

    def pretraining_info(self) -> dict:
        corpora = {c for c, _ in self.stages}
        return {"synth": "simulated" in corpora, "real": "real" in corpora,
                "epochs": self.epochs_per_stage if self.stages else None}
