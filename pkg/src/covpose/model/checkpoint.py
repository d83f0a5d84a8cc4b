"""Named-parameter checkpoints with configuration and stage lineage."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics import Tensor, sten
from .config import HeadConfig, MaeConfig, ViTConfig
from .mae import init_mae_decoder
from .vit import Params, init_encoder
from .vitpose import init_head


@dataclass(frozen=True)
class StageRecord:
    stage: str
    dataset: str | None = None
    epochs: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        return {"stage": self.stage, "dataset": self.dataset, "epochs": self.epochs, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "StageRecord":
        return cls(d["stage"], d.get("dataset"), int(d.get("epochs", 0)), d.get("seed"))


@dataclass
class Checkpoint:
    params: Params
    vit: ViTConfig
    mae: MaeConfig | None = None
    head: HeadConfig | None = None
    lineage: tuple[StageRecord, ...] = field(default_factory=tuple)

    @classmethod
    def fresh(cls, vit: ViTConfig, seed: int, mae: MaeConfig | None = None,
              head: HeadConfig | None = None) -> "Checkpoint":
        rng = np.random.default_rng(seed)
        params = init_encoder(vit, rng)
        if mae is not None:
            params.update(init_mae_decoder(vit, mae, rng))
        if head is not None:
            params.update(init_head(vit, head, rng))
        return cls(params, vit, mae, head, ())

    def with_stage(self, record: StageRecord) -> "Checkpoint":
        return Checkpoint(self.params, self.vit, self.mae, self.head, self.lineage + (record,))

    def copy(self) -> "Checkpoint":
        return Checkpoint(clone_params(self.params), self.vit, self.mae, self.head, self.lineage)

    def group(self, prefix: str) -> Params:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def trainable(self, prefixes: tuple[str, ...]) -> list[Tensor]:
        return [v for k, v in sorted(self.params.items()) if k.split(".")[0] in prefixes]

    def config_dict(self) -> dict:
        return {
            "vit": self.vit.to_dict(),
            "mae": self.mae.to_dict() if self.mae else None,
            "head": self.head.to_dict() if self.head else None,
            "lineage": [r.to_dict() for r in self.lineage],
        }


def clone_params(params: Params) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def init_encoder_from(source: Checkpoint, target: Checkpoint, stage: StageRecord | None = None) -> Checkpoint:
    """Copy every ``encoder.*`` tensor from ``source`` into a copy of ``target``.

    Parameters outside the encoder keep the target's (fresh) values. The
    result's lineage is the source lineage plus ``stage``.
    """
    src = source.group("encoder")
    dst = target.group("encoder")
    for name in sorted(dst):
        if name not in src:
            raise ValueError(f"source checkpoint lacks encoder parameter {name}")
        if src[name].shape != dst[name].shape:
            raise ValueError(f"shape mismatch for {name}: source {src[name].shape} vs target {dst[name].shape}")
    extra = sorted(set(src) - set(dst))
    if extra:
        raise ValueError(f"source encoder parameter {extra[0]} has no counterpart in the target")
    params = clone_params(target.params)
    for name in dst:
        params[name] = Tensor(src[name].data.copy(), requires_grad=True)
    record = stage or StageRecord("init-encoder")
    return Checkpoint(params, target.vit, target.mae, target.head, source.lineage + (record,))


def _param_file(name: str) -> str:
    return name + ".sten"


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    cfg = ckpt.config_dict()
    cfg["parameters"] = {k: list(v.shape) for k, v in sorted(ckpt.params.items())}
    (root / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    for k, v in ckpt.params.items():
        sten.save(root / _param_file(k), v.data)
    return root


def load_checkpoint(path) -> Checkpoint:
    root = Path(path)
    cfg = json.loads((root / "config.json").read_text())
    params = {}
    for name, shape in cfg["parameters"].items():
        arr = sten.load(root / _param_file(name))
        if list(arr.shape) != shape:
            raise ValueError(f"{name}: stored shape {list(arr.shape)} does not match config {shape}")
        params[name] = Tensor(arr, requires_grad=True)
    return Checkpoint(
        params,
        ViTConfig(**cfg["vit"]),
        MaeConfig(**cfg["mae"]) if cfg.get("mae") else None,
        HeadConfig(**cfg["head"]) if cfg.get("head") else None,
        tuple(StageRecord.from_dict(r) for r in cfg.get("lineage", [])),
    )
