import json

import numpy as np
import pytest

from covpose.data import Cover, Dataset, Modality, SMAL_POLICY, Source, SplitPlan, assemble_split, generate_dataset, make_holdout
from covpose.model import Checkpoint, HeadConfig, MaeConfig, ViTConfig
from covpose.numerics import lr_at
from covpose.train import (EARLY_STOP_METRIC, PretrainConfig, StagePlan, TrainConfig, TrainingDiverged, Variant,
                           cross_validate, finetune, mae_holdout, mean_pck, pretrain_mae, run_hierarchy, slp_split,
                           two_stage_finetune, with_head, write_manifest)
from covpose.train.loops import _groups, _schedule, _step_lr

TINY = ViTConfig.tiny()


@pytest.fixture(scope="module")
def smal():
    return generate_dataset(15, 0)


@pytest.fixture(scope="module")
def sim():
    return generate_dataset(6, 1, Source.SYNTH_SIM)


def quick(epochs=1, **kw):
    return TrainConfig(4, 1e-3, epochs, 0, **kw)


def params_equal(a, b):
    return sorted(a.params) == sorted(b.params) and all(
        np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


# -- configs -------------------------------------------------------------------

def test_presets():
    slp, sm = TrainConfig.slp(), TrainConfig.smal()
    assert (slp.batch_size, slp.base_lr, slp.epochs, slp.warmup) == (256, 1e-3, 50, 5)
    assert (sm.batch_size, sm.base_lr, sm.epochs, sm.warmup) == (16, 1e-4, 50, 5)
    assert sm.policy == SMAL_POLICY
    desk = TrainConfig.slp_desk()
    assert desk.base_lr / desk.batch_size == pytest.approx(slp.base_lr / slp.batch_size)
    assert slp.early_stop_metric == EARLY_STOP_METRIC
    assert slp.to_dict()["early_stop_metric"] == EARLY_STOP_METRIC
    for bad in (dict(batch_size=0), dict(base_lr=0.0), dict(epochs=-1)):
        with pytest.raises(ValueError):
            slp.with_(**bad)


def test_stage_plans():
    assert StagePlan(Variant.BASELINE).stages == ()
    assert [t for _, t in StagePlan("B").stages] == ["MAE-sim", "MAE-real"]
    assert [c for c, _ in StagePlan("S").stages] == ["simulated"]
    assert [c for c, _ in StagePlan("R").stages] == ["real"]
    assert StagePlan("S").scaled(0.1).epochs_per_stage == 15
    assert StagePlan("B", 150).label() == "B-150" and StagePlan("BASELINE").label() == "Base"
    assert StagePlan("S", 150).pretraining_info() == {"synth": True, "real": False, "epochs": 150}
    assert StagePlan("BASELINE").pretraining_info()["epochs"] is None
    with pytest.raises(ValueError):
        StagePlan("X")
    with pytest.raises(ValueError):
        StagePlan("S", -1)


def test_schedule_clamps_warmup_and_uses_step_midpoints():
    s = _schedule(1e-3, 5, 1)
    assert s.warmup_epochs == 0
    s = _schedule(1e-3, 5, 50)
    assert _step_lr(s, 0, 0, 2) == pytest.approx(lr_at(s, 0.25))
    assert _step_lr(s, 49, 1, 2) > 0


def test_weight_decay_groups():
    ck = with_head(Checkpoint.fresh(TINY, 0, MaeConfig.tiny()), 0)
    decay, keep = _groups(ck, ("encoder", "mae", "head"))
    assert all(p.ndim >= 2 for p in decay)
    assert all(p.ndim == 1 or p is ck.params["mae.mask_token"] for p in keep)
    assert ck.params["mae.mask_token"] in keep
    assert len(decay) + len(keep) == len(ck.params)


# -- pretraining -------------------------------------------------------------------

def test_mae_holdout_keeps_covers_together(sim):
    train, held = mae_holdout(sim, 0.34, 0)
    assert {s.pose_id for s in train}.isdisjoint({s.pose_id for s in held})
    assert len(held) == 6 and len(train) == 12
    with pytest.raises(ValueError):
        mae_holdout(sim, 1.0, 0)


def test_pretrain_mae_runs_and_is_deterministic(sim):
    cfg = PretrainConfig.tiny(batch_size=6, holdout_fraction=0.34)
    h1, h2 = [], []
    a = pretrain_mae(None, sim, 2, cfg, 3, history=h1)
    b = pretrain_mae(None, sim, 2, cfg, 3, history=h2)
    assert params_equal(a, b) and h1 == h2
    assert [h["epoch"] for h in h1] == [1, 2]
    assert all(np.isfinite(h["heldout_masked_mse"]) for h in h1)
    assert h1[-1]["lr_end"] == 0.0
    assert a.lineage[-1].stage == "MAE" and a.lineage[-1].dataset == "SYNTH_SIM" and a.lineage[-1].epochs == 2
    fresh = Checkpoint.fresh(TINY, 3, MaeConfig.tiny())
    assert not np.array_equal(a.params["encoder.patch_embed.weight"].data, fresh.params["encoder.patch_embed.weight"].data)


def test_pretrain_mae_edge_cases(sim):
    cfg = PretrainConfig.tiny()
    zero = pretrain_mae(None, sim, 0, cfg, 0)
    assert params_equal(zero, Checkpoint.fresh(TINY, 0, MaeConfig.tiny()))
    assert zero.lineage[-1].epochs == 0
    with pytest.raises(ValueError):
        pretrain_mae(None, Dataset((), Source.SYNTH_SIM), 1, cfg, 0)
    with pytest.raises(ValueError):
        pretrain_mae(None, sim, -1, cfg, 0)


def test_run_hierarchy_lineage(sim, smal):
    cfg = PretrainConfig.tiny(batch_size=9, holdout_fraction=0.0)
    base = run_hierarchy(StagePlan("BASELINE"), None, None, cfg, 0)
    assert [r.stage for r in base.lineage] == ["no-pretraining"]
    both = run_hierarchy(StagePlan("B", 1), sim, sim, cfg, 0)
    assert [r.stage for r in both.lineage] == ["MAE-sim", "MAE-real"]
    with pytest.raises(ValueError, match="real"):
        run_hierarchy(StagePlan("R", 1), sim, None, cfg, 0)


# -- fine-tuning -----------------------------------------------------------------------

def test_finetune_rejects_overlap_and_empty(smal):
    ck = Checkpoint.fresh(TINY, 0)
    with pytest.raises(ValueError, match="share"):
        finetune(ck, list(smal)[:3], list(smal)[:3], quick())
    with pytest.raises(ValueError):
        finetune(ck, [], list(smal)[:3], quick())


def test_finetune_respects_max_steps_and_hook(smal):
    train, val, _ = assemble_split(smal, make_holdout(smal, 12, 0))
    seen, hist = [], []
    ck, best_epoch, val_pck = finetune(Checkpoint.fresh(TINY, 0), train, val, quick(3), history=hist,
                                       max_steps=5, batch_hook=lambda x: seen.append(x.shape))
    assert len(seen) == 5 and seen[0] == (4, 224, 224, 3)
    assert hist[-1]["steps"] == 5 and len(hist) == 1   # 36 samples make 9 steps per epoch
    assert 1 <= best_epoch <= len(hist)
    assert val_pck == max(h["val_pck"] for h in hist)
    assert ck.lineage[-1].stage == "finetune" and ck.head == HeadConfig.tiny()
    assert mean_pck(ck, val) == pytest.approx(val_pck)


def test_finetune_modality_zeroes_channels(smal):
    train, val, _ = assemble_split(smal, make_holdout(smal, 12, 0))
    seen = []
    finetune(Checkpoint.fresh(TINY, 0), train, val, quick(), Modality.PSM_ONLY, max_steps=1,
             batch_hook=lambda x: seen.append(x))
    assert np.all(seen[0][..., 0] == 0) and np.any(seen[0][..., 2] != 0)


def test_finetune_deterministic(smal):
    train, val, _ = assemble_split(smal, make_holdout(smal, 12, 0))
    a = finetune(Checkpoint.fresh(TINY, 0), train, val, quick(), max_steps=2)
    b = finetune(Checkpoint.fresh(TINY, 0), train, val, quick(), max_steps=2)
    assert params_equal(a[0], b[0]) and a[1:] == b[1:]


def test_finetune_divergence_returns_last_good(smal):
    train, val, _ = assemble_split(smal, make_holdout(smal, 12, 0))
    ck = with_head(Checkpoint.fresh(TINY, 0), 0)
    ck.params["head.final.bias"].data[:] = np.float32(3e38)
    ck.params["head.final.weight"].data[:] = np.float32(3e38)
    with pytest.raises(TrainingDiverged) as e, np.errstate(over="ignore"):
        finetune(ck, train, val, quick())
    assert e.value.epoch == 0 and e.value.checkpoint is not None


# -- protocol ----------------------------------------------------------------------

def test_slp_split_counts():
    slp = generate_dataset(18, 0, Source.SLP_LIKE)
    train, val = slp_split(slp)
    assert len(train) == 3 * round(18 * 4050 / 4590)
    assert all(s.cover != Cover.UNCOVERED for s in val)


def test_two_stage_finetune(smal):
    slp = generate_dataset(9, 2, Source.SLP_LIKE)
    plan = SplitPlan((tuple(range(0, 9)), tuple(range(9, 12)), tuple(range(12, 15))), 1, 2)
    res = two_stage_finetune(Checkpoint.fresh(TINY, 0), slp, smal, plan, slp_cfg=quick(), smal_cfg=quick())
    assert [r.stage for r in res.checkpoint.lineage] == ["finetune-SLP", "finetune-SMaL"]
    assert res.stage1 is not None and {h["stage"] for h in res.history} == {"finetune-SLP", "finetune-SMaL"}
    only = two_stage_finetune(Checkpoint.fresh(TINY, 0), None, smal, plan, smal_cfg=quick(), skip_stage1=True)
    assert only.stage1 is None and [r.stage for r in only.checkpoint.lineage] == ["finetune-SMaL"]
    with pytest.raises(ValueError):
        two_stage_finetune(Checkpoint.fresh(TINY, 0), None, smal, plan, smal_cfg=quick())


def test_cross_validate_rotates_folds(smal):
    plans = []

    def factory(plan):
        plans.append(plan)
        return with_head(Checkpoint.fresh(TINY, 0), 0)

    res = cross_validate(factory, smal, k=5, name="probe")
    assert [p.test_fold for p in plans] == list(range(5))
    assert [p.val_fold for p in plans] == [1, 2, 3, 4, 0]
    for p in plans:
        assert set(p.train_ids).isdisjoint(p.folds[p.val_fold] + p.folds[p.test_fold])
    assert len(res.pck) == 5 and res.mean_pck == pytest.approx(np.mean(res.pck))
    assert all(r["n_test"] == 6 for r in res.runs)
    with pytest.raises(ValueError):
        cross_validate(factory, generate_dataset(15, 0, Source.SLP_LIKE))


def test_write_manifest(tmp_path):
    p = write_manifest(tmp_path / "run" / "m.json", plan=StagePlan("S", 15), cfg=TrainConfig.smal(),
                       variant=Variant.S, values=np.arange(3))
    d = json.loads(p.read_text())
    assert list(d) == sorted(d)
    assert d["variant"] == "S" and d["values"] == [0, 1, 2] and d["cfg"]["batch_size"] == 16
    assert d["plan"] == {"variant": "S", "epochs_per_stage": 15, "stages": ["MAE-sim"]}
