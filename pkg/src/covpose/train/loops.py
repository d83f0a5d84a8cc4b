"""MAE pretraining and heatmap fine-tuning loops."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .. import numerics as nx
from ..data.augment import augment, derive_seed, preprocess_array
from ..data.types import Dataset, Modality, Sample
from ..eval.metrics import MetricConfig, pck
from ..heatmap import decode_array, encode_batch
from ..model.checkpoint import Checkpoint, StageRecord, clone_params
from ..model.config import HeadConfig
from ..model.mae import init_mae_decoder, mae_forward, mae_loss
from ..model.vitpose import init_head, vitpose_forward
from ..numerics import AdamWState, LrSchedule, NonFiniteError, Tensor, adamw_step, lr_at
from ..pose import Plane, Pose
from .config import PretrainConfig, TrainConfig

EVAL_BATCH = 32
HELDOUT_EPOCH_TAG = 2 ** 31 - 1     # mask seeds of held-out images never collide with training epochs


class TrainingDiverged(RuntimeError):
    """Raised when a loss or update turns non-finite; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Checkpoint, epoch: int):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch


def _schedule(base_lr: float, warmup: int, epochs: int) -> LrSchedule:
    # short desk-scale runs keep at least one post-warmup epoch
    return LrSchedule(base_lr, min(warmup, epochs - 1), epochs)


def _step_lr(schedule: LrSchedule, epoch: int, step: int, steps: int) -> float:
    return lr_at(schedule, epoch + (step + 0.5) / steps)


def _groups(ckpt: Checkpoint, prefixes: tuple[str, ...]) -> tuple[list[Tensor], list[Tensor]]:
    """(decayed, undecayed) trainable parameters; vectors such as biases and norm gains skip decay."""
    names = sorted(k for k in ckpt.params if k.split(".")[0] in prefixes)
    decay = [ckpt.params[k] for k in names if ckpt.params[k].ndim >= 2 and not k.endswith("mask_token")]
    keep = [ckpt.params[k] for k in names if not (ckpt.params[k].ndim >= 2 and not k.endswith("mask_token"))]
    return decay, keep


class _Optimizer:
    def __init__(self, ckpt: Checkpoint, prefixes: tuple[str, ...], weight_decay: float):
        self.decay, self.keep = _groups(ckpt, prefixes)
        self.wd = weight_decay
        self.states = (AdamWState.for_params(self.decay), AdamWState.for_params(self.keep))

    def zero_grad(self):
        for p in self.decay + self.keep:
            p.grad = None

    def step(self, lr: float):
        for p in self.decay + self.keep:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        adamw_step(self.decay, self.states[0], lr, weight_decay=self.wd)
        adamw_step(self.keep, self.states[1], lr, weight_decay=0.0)


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 17]).permutation(n)


def _batches(order: np.ndarray, batch_size: int):
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


# -- MAE pretraining ---------------------------------------------------------

def mae_holdout(dataset: Dataset, fraction: float, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Split samples by pose_id into (train, held-out); every cover of a pose stays together."""
    ids = dataset.pose_ids
    n_hold = int(round(len(ids) * fraction)) if fraction > 0 else 0
    if n_hold >= len(ids):
        raise ValueError(f"holdout fraction {fraction} leaves no training poses")
    held = set(np.random.default_rng([seed, 29]).permutation(ids)[:n_hold].tolist())
    train = [s for s in dataset.samples if s.pose_id not in held]
    return train, [s for s in dataset.samples if s.pose_id in held]


def _images(samples: Sequence[Sample], idx, modality=Modality.BOTH) -> np.ndarray:
    return np.stack([preprocess_array(samples[i], modality) for i in idx])


def masked_mse(ckpt: Checkpoint, samples: Sequence[Sample], seed: int) -> float:
    """Masked-patch reconstruction error on ``samples`` with masks fixed by ``seed``."""
    if not samples:
        return float("nan")
    total = 0.0
    for chunk in _batches(np.arange(len(samples)), EVAL_BATCH):
        seeds = [derive_seed(seed, int(i), HELDOUT_EPOCH_TAG) for i in chunk]
        recon, msk, target = mae_forward(ckpt.vit, ckpt.mae, ckpt.params, _images(samples, chunk), seeds)
        total += float(mae_loss(recon, target, msk).data) * len(chunk)
    return total / len(samples)


def _with_decoder(init: Checkpoint | None, cfg: PretrainConfig, seed: int) -> Checkpoint:
    if init is None:
        return Checkpoint.fresh(cfg.vit, seed, cfg.mae)
    ckpt = init.copy()
    if not ckpt.group("mae"):
        params = dict(ckpt.params)
        params.update(init_mae_decoder(ckpt.vit, cfg.mae, np.random.default_rng([seed, 3])))
        ckpt = Checkpoint(params, ckpt.vit, cfg.mae, ckpt.head, ckpt.lineage)
    elif ckpt.mae is None:
        raise ValueError("checkpoint carries decoder parameters but no decoder configuration")
    return ckpt


def pretrain_mae(init: Checkpoint | None, dataset: Dataset, epochs: int, cfg: PretrainConfig, seed: int,
                 stage: str = "MAE", history: list | None = None,
                 heldout: Sequence[Sample] | None = None) -> Checkpoint:
    """Masked-autoencoder training of the encoder and decoder with AdamW.

    Held-out poses (``cfg.holdout_fraction`` of the dataset, or ``heldout``) are
    scored every epoch with fixed masks. One dict per epoch is appended to
    ``history``. On a non-finite loss :class:`TrainingDiverged` is raised with
    the checkpoint from the end of the last completed epoch.
    """
    if len(dataset) == 0:
        raise ValueError("pretraining dataset is empty")
    if epochs < 0:
        raise ValueError(f"epochs must be non-negative, got {epochs}")
    ckpt = _with_decoder(init, cfg, seed)
    record = StageRecord(stage, dataset.source.value, epochs, seed)
    if epochs == 0:
        return ckpt.with_stage(record)
    if heldout is None:
        train, heldout = mae_holdout(dataset, cfg.holdout_fraction, seed)
    else:
        train = list(dataset.samples)
    opt = _Optimizer(ckpt, ("encoder", "mae"), cfg.weight_decay)
    schedule = _schedule(cfg.base_lr, cfg.warmup, epochs)
    good = ckpt.copy()
    for epoch in range(epochs):
        batches = _batches(_epoch_order(len(train), seed, epoch), cfg.batch_size)
        losses = []
        try:
            for step, idx in enumerate(batches):
                seeds = [derive_seed(seed, int(i), epoch) for i in idx]
                recon, msk, target = mae_forward(ckpt.vit, ckpt.mae, ckpt.params, _images(train, idx), seeds)
                loss = mae_loss(recon, target, msk)
                opt.zero_grad()
                loss.backward()
                opt.step(_step_lr(schedule, epoch, step, len(batches)))
                losses.append(float(loss.data) * len(idx))
        except NonFiniteError as e:
            raise TrainingDiverged(f"{stage} diverged in epoch {epoch + 1}: {e}", good, epoch) from e
        good = ckpt.copy()
        if history is not None:
            history.append({"stage": stage, "epoch": epoch + 1, "train_loss": sum(losses) / len(train),
                            "heldout_masked_mse": masked_mse(ckpt, heldout, seed),
                            "lr_end": lr_at(schedule, epoch + 1)})
    return ckpt.with_stage(record)


# -- fine-tuning ---------------------------------------------------------------

def with_head(ckpt: Checkpoint, seed: int, hcfg: HeadConfig | None = None) -> Checkpoint:
    """A copy carrying a pose head; a fresh head is created when none exists."""
    out = ckpt.copy()
    if out.group("head"):
        return out
    hcfg = hcfg or (HeadConfig.tiny() if ckpt.vit.width <= 64 else HeadConfig.base())
    params = dict(out.params)
    params.update(init_head(out.vit, hcfg, np.random.default_rng([seed, 5])))
    return Checkpoint(params, out.vit, out.mae, hcfg, out.lineage)


def predict(ckpt: Checkpoint, samples: Sequence[Sample], modality=Modality.BOTH,
            batch_size: int = EVAL_BATCH) -> list[Pose]:
    out = []
    for idx in _batches(np.arange(len(samples)), batch_size):
        maps = vitpose_forward(ckpt.vit, ckpt.params, _images(samples, idx, modality)).data
        coords, low = decode_array(maps)
        out.extend(Pose(c, Plane.PSM, flags=f) for c, f in zip(coords, low))
    return out


def mean_pck(ckpt: Checkpoint, samples: Sequence[Sample], modality=Modality.BOTH,
             metric: MetricConfig = MetricConfig()) -> float:
    return pck(predict(ckpt, samples, modality), [s.pose for s in samples], metric)[1]


def finetune(model: Checkpoint, train: Sequence[Sample], val: Sequence[Sample], cfg: TrainConfig,
             modality=Modality.BOTH, stage: str = "finetune", dataset_tag: str | None = None,
             history: list | None = None, max_steps: int | None = None,
             batch_hook: Callable[[np.ndarray], None] | None = None,
             require_disjoint: bool = True) -> tuple[Checkpoint, int, float]:
    """Heatmap MSE training; returns the snapshot with the best mean validation PCK.

    Training samples are augmented afresh every epoch with seeds derived from
    ``cfg.seed``; validation uses the samples as given. ``max_steps`` caps the
    total number of optimizer steps. ``require_disjoint=False`` allows scoring
    on the training poses themselves (overfitting checks).
    """
    modality = Modality(modality)
    if not train or not val:
        raise ValueError(f"empty split: {len(train)} training and {len(val)} validation samples")
    overlap = {s.pose_id for s in train} & {s.pose_id for s in val}
    if overlap and require_disjoint:
        raise ValueError(f"train and validation share pose_ids, e.g. {sorted(overlap)[:3]}")
    ckpt = with_head(model, cfg.seed)
    record = StageRecord(stage, dataset_tag, cfg.epochs, cfg.seed)
    best = (-math.inf, 0, ckpt.copy())
    if cfg.epochs == 0:
        return ckpt.with_stage(record), 0, mean_pck(ckpt, val, modality)
    opt = _Optimizer(ckpt, ("encoder", "head"), cfg.weight_decay)
    schedule = _schedule(cfg.base_lr, cfg.warmup, cfg.epochs)
    steps_done = 0
    for epoch in range(cfg.epochs):
        batches = _batches(_epoch_order(len(train), cfg.seed, epoch), cfg.batch_size)
        losses = []
        for step, idx in enumerate(batches):
            if max_steps is not None and steps_done >= max_steps:
                break
            batch = [augment(train[i], cfg.policy, derive_seed(cfg.seed, int(i), epoch)) for i in idx]
            images = np.stack([preprocess_array(s, modality) for s in batch])
            if batch_hook is not None:
                batch_hook(images)
            target = encode_batch([s.pose for s in batch])
            try:
                loss = nx.mse_loss(vitpose_forward(ckpt.vit, ckpt.params, images), target)
                opt.zero_grad()
                loss.backward()
                opt.step(_step_lr(schedule, epoch, step, len(batches)))
            except NonFiniteError as e:
                raise TrainingDiverged(f"{stage} diverged in epoch {epoch + 1}: {e}", best[2], epoch) from e
            losses.append(float(loss.data))
            steps_done += 1
        if not losses:
            break
        val_pck = mean_pck(ckpt, val, modality)
        if val_pck > best[0]:
            best = (val_pck, epoch + 1, ckpt.copy())
        if history is not None:
            history.append({"stage": stage, "epoch": epoch + 1, "train_loss": float(np.mean(losses)),
                            "val_pck": val_pck, "steps": steps_done})
    val_pck, best_epoch, snap = best
    return snap.with_stage(record), best_epoch, val_pck
