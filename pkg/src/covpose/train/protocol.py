"""Staged pretraining, two-stage fine-tuning and k-fold cross-validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from ..data.splits import SplitPlan, assemble_split, make_folds, make_holdout
from ..data.types import Dataset, Modality, Source
from ..eval.metrics import MetricConfig, nme_mm, pck
from ..eval.report import EvalReport, breakdown
from ..model.checkpoint import Checkpoint, StageRecord
from .config import PretrainConfig, StagePlan, TrainConfig
from .loops import finetune, predict, pretrain_mae

SLP_TRAIN_FRACTION = 4050 / 4590


def run_hierarchy(plan: StagePlan, simulated: Dataset | None, real: Dataset | None, cfg: PretrainConfig,
                  seed: int, init: Checkpoint | None = None, history: list | None = None) -> Checkpoint:
    """Run the pretraining stages of ``plan`` in order.

    Each stage continues from the previous one, encoder and decoder alike.
    BASELINE returns the (fresh or given) initialization with a lineage entry.
    """
    corpora = {"simulated": simulated, "real": real}
    for corpus, _ in plan.stages:
        if corpora[corpus] is None or len(corpora[corpus]) == 0:
            raise ValueError(f"variant {plan.variant.value} needs a {corpus} dataset")
    ckpt = init.copy() if init is not None else Checkpoint.fresh(cfg.vit, seed, cfg.mae)
    if not plan.stages:
        return ckpt.with_stage(StageRecord("no-pretraining", None, 0, seed))
    for i, (corpus, tag) in enumerate(plan.stages):
        ckpt = pretrain_mae(ckpt, corpora[corpus], plan.epochs_per_stage, cfg, seed + 1000 * i,
                            stage=tag, history=history)
    return ckpt


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    best_epoch: int
    val_pck: float
    stage1: tuple[int, float] | None = None
    history: list = field(default_factory=list)


def slp_split(slp_like: Dataset, seed: int = 0):
    """Train on 4050/4590 of the poses (every cover), validate on the covered rest."""
    n_train = int(round(len(slp_like.pose_ids) * SLP_TRAIN_FRACTION))
    train, val, _ = assemble_split(slp_like, make_holdout(slp_like, n_train, seed))
    return train, val


def two_stage_finetune(init: Checkpoint, slp_like: Dataset | None, smal_like: Dataset, plan: SplitPlan,
                       modality=Modality.BOTH, slp_cfg: TrainConfig | None = None,
                       smal_cfg: TrainConfig | None = None, skip_stage1: bool = False) -> FinetuneResult:
    """Fine-tune on the SLP-like corpus, then continue on the SMaL-like training folds.

    Stage 2 starts from the stage-1 best snapshot, head included. With
    ``skip_stage1`` only the second stage runs.
    """
    slp_cfg = slp_cfg or TrainConfig.slp_desk()
    smal_cfg = smal_cfg or TrainConfig.smal()
    history: list = []
    model, stage1 = init, None
    if not skip_stage1:
        if slp_like is None:
            raise ValueError("stage 1 needs an SLP-like dataset")
        tr, va = slp_split(slp_like, slp_cfg.seed)
        model, ep, vp = finetune(init, tr, va, slp_cfg, modality, stage="finetune-SLP",
                                 dataset_tag=slp_like.source.value, history=history)
        stage1 = (ep, vp)
    train, val, _ = assemble_split(smal_like, plan)
    model, ep, vp = finetune(model, train, val, smal_cfg, modality, stage="finetune-SMaL",
                             dataset_tag=smal_like.source.value, history=history)
    return FinetuneResult(model, ep, vp, stage1, history)


@dataclass
class CrossValResult:
    pck: list
    nme_mm: list
    mean_pck: float
    mean_nme_mm: float
    report: EvalReport
    runs: list = field(default_factory=list)


def cross_validate(model_factory: Callable[[SplitPlan], Checkpoint], dataset: Dataset, k: int = 5, seed: int = 0,
                   modality=Modality.BOTH, name: str = "model", pretraining: dict | None = None,
                   metric: MetricConfig = MetricConfig()) -> CrossValResult:
    """Train once per test fold (validation on the next fold) and score each test fold.

    ``model_factory(plan)`` must train only on ``plan.train_ids`` and select on
    ``plan.val_fold``; it returns the checkpoint (or a :class:`FinetuneResult`).
    """
    if dataset.source != Source.SMAL_LIKE:
        raise ValueError(f"cross-validation runs on SMAL_LIKE data, got {dataset.source.value}")
    base = SplitPlan(make_folds(dataset, k, seed), val_fold=1, test_fold=0)
    preds, gts, meta, runs = [], [], [], []
    fold_pck, fold_nme = [], []
    for fold in range(k):
        plan = base.with_rotation(fold)
        _, _, test = assemble_split(dataset, plan)
        out = model_factory(plan)
        ckpt = out.checkpoint if isinstance(out, FinetuneResult) else out
        p = predict(ckpt, test, modality)
        g = [s.pose for s in test]
        fold_pck.append(pck(p, g, metric)[1])
        fold_nme.append(nme_mm(p, g, metric)[1])
        preds += p
        gts += g
        meta += [{"cover": s.cover, "fold": fold} for s in test]
        runs.append({"test_fold": fold, "val_fold": plan.val_fold, "n_test": len(test),
                     "lineage": [r.to_dict() for r in ckpt.lineage],
                     "best_epoch": getattr(out, "best_epoch", None), "val_pck": getattr(out, "val_pck", None)})
    report = breakdown(preds, gts, meta, metric, name, pretraining)
    row = report.per_fold[name]
    return CrossValResult(row["pck"], row["nme_mm"], row["mean_pck"], row["mean_nme_mm"], report, runs)


def write_manifest(path, **fields) -> Path:
    """Run manifest: configs, seeds, lineage, per-epoch log and final metrics as sorted JSON."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(fields, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return p


def _jsonable(obj):
    for attr in ("to_dict", "value"):
        if hasattr(obj, attr):
            v = getattr(obj, attr)
            return v() if callable(v) else v
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")
