"""Command-line front end: data generation, registration, training, evaluation, reports, overlays.

Exit codes: 0 success, 1 usage error, 2 configuration / input schema error,
3 runtime failure (a partial run manifest is still written).
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("gen-data", "register", "pretrain", "finetune", "crossval", "eval", "report", "overlay")


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _modality(text: str) -> str:
    from .data.types import Modality
    return Modality(text.strip().upper()).value


def _preset(text: str) -> str:
    if text.strip() not in ("tiny", "base"):
        raise ValueError(f"preset must be tiny or base, got {text!r}")
    return text.strip()


# section -> key -> (parser, default); desk-scale defaults
SCHEMA: dict[str, dict[str, tuple]] = {
    "data": {
        "smal_poses": (int, 300),
        "slp_poses": (int, 90),
        "sim_poses": (int, 300),
    },
    "model": {
        "preset": (_preset, "tiny"),
    },
    "pretrain": {
        "batch_size": (int, 32),
        "base_lr": (float, 1e-3),
        "warmup": (int, 2),
        "weight_decay": (float, 0.05),
        "holdout_fraction": (float, 0.1),
    },
    "finetune_slp": {
        "batch_size": (int, 32),
        "base_lr": (float, 1e-3 * 32 / 256),
        "epochs": (int, 50),
        "warmup": (int, 5),
    },
    "finetune_smal": {
        "batch_size": (int, 16),
        "base_lr": (float, 1e-4),
        "epochs": (int, 50),
        "warmup": (int, 5),
    },
    "run": {
        "modality": (_modality, "BOTH"),
        "skip_stage1": (_bool, False),
        "epoch_scale": (float, 0.1),
        "folds": (int, 5),
    },
}


def load_config(path: str | None) -> dict:
    """Resolve a key=value config (with [sections]) against the schema and defaults."""
    cfg = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"{path}: malformed config: {e}") from None
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{sec}] (known: {', '.join(SCHEMA)})")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
            conv = SCHEMA[sec][key][0]
            try:
                cfg[sec][key] = conv(raw)
            except ValueError as e:
                raise ConfigError(f"{path}: [{sec}] {key} = {raw!r}: {e}") from None
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    d = cfg["data"]
    for k in ("smal_poses", "slp_poses", "sim_poses"):
        if d[k] < 3 or d[k] % 3:
            raise ConfigError(f"[data] {k} must be a positive multiple of 3, got {d[k]}")
    if not 0 < cfg["run"]["epoch_scale"] <= 1:
        raise ConfigError(f"[run] epoch_scale must lie in (0, 1], got {cfg['run']['epoch_scale']}")
    if cfg["run"]["folds"] < 3:
        raise ConfigError("[run] folds must be at least 3")
    for sec in ("pretrain", "finetune_slp", "finetune_smal"):
        if cfg[sec]["batch_size"] < 1 or cfg[sec]["base_lr"] <= 0:
            raise ConfigError(f"[{sec}] batch_size and base_lr must be positive")
    if not 0 <= cfg["pretrain"]["holdout_fraction"] < 1:
        raise ConfigError("[pretrain] holdout_fraction must lie in [0, 1)")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file with [sections]")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads (1 = deterministic)")

    p = _Parser(prog="covpose", description="Covered in-bed pose estimation from depth and pressure.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="render a synthetic dataset")
    g.add_argument("--poses", type=int, help="number of poses (three covers each)")
    g.add_argument("--source", default="SMAL_LIKE", choices=["SMAL_LIKE", "SLP_LIKE", "SYNTH_SIM"])

    r = sub.add_parser("register", parents=[common], help="estimate a camera-to-mat homography")
    r.add_argument("--outlier-fraction", type=float, default=0.0)
    r.add_argument("--noise", type=float, default=0.0, help="landmark noise in camera pixels")
    r.add_argument("--threshold", type=float, default=1.0, help="RANSAC inlier threshold in sensels")

    pt = sub.add_parser("pretrain", parents=[common], help="hierarchical MAE pretraining")
    pt.add_argument("--variant", default="S", choices=["BASELINE", "S", "R", "B"])
    pt.add_argument("--stage-epochs", type=int, default=15)
    pt.add_argument("--sim", help="simulated dataset directory (generated if omitted)")
    pt.add_argument("--real", help="real-like dataset directory (generated if omitted)")

    ft = sub.add_parser("finetune", parents=[common], help="two-stage fine-tuning on one fold split")
    ft.add_argument("--init", help="checkpoint directory (fresh weights if omitted)")
    ft.add_argument("--data", help="SMaL-like dataset directory (generated if omitted)")
    ft.add_argument("--slp", help="SLP-like dataset directory (generated if omitted)")
    ft.add_argument("--test-fold", type=int, default=0)

    cv = sub.add_parser("crossval", parents=[common], help="pretraining plus k-fold two-stage fine-tuning")
    cv.add_argument("--variant", default="S", choices=["BASELINE", "S", "R", "B"])
    cv.add_argument("--stage-epochs", type=int, default=15)
    cv.add_argument("--data", help="SMaL-like dataset directory (generated if omitted)")
    cv.add_argument("--slp", help="SLP-like dataset directory (generated if omitted)")
    cv.add_argument("--sim", help="simulated dataset directory (generated if omitted)")
    cv.add_argument("--name", help="model label in reports")

    ev = sub.add_parser("eval", parents=[common], help="score predictions against a dataset")
    ev.add_argument("--data", required=True)
    src = ev.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="predictions JSON")
    src.add_argument("--checkpoint", help="checkpoint directory to predict with")
    ev.add_argument("--name", default="model")

    rp = sub.add_parser("report", parents=[common], help="merge cross-validation reports")
    rp.add_argument("--inputs", nargs="+", required=True, help="report directories or report.json files")
    rp.add_argument("--baseline", required=True)
    rp.add_argument("--comparisons", type=int, help="number of comparisons for the Bonferroni correction")

    ov = sub.add_parser("overlay", parents=[common], help="draw skeletons over the depth channel as PNG")
    ov.add_argument("--data", required=True)
    osrc = ov.add_mutually_exclusive_group()
    osrc.add_argument("--predictions")
    osrc.add_argument("--checkpoint")
    ov.add_argument("--limit", type=int, default=12)
    return p


# -- helpers -----------------------------------------------------------------------

class Run:
    """Collects the resolved configuration and a progress log for the run manifest."""

    def __init__(self, args, cfg: dict):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.log: list[str] = []
        self.outputs: dict = {}
        self.extra: dict = {}

    def note(self, msg: str) -> None:
        self.log.append(msg)
        print(msg, file=sys.stderr)

    def manifest(self, status: str, error: str | None = None) -> Path:
        from .train.protocol import write_manifest
        args = {k: v for k, v in sorted(vars(self.args).items())}
        return write_manifest(self.out / "run_manifest.json", command=self.args.command, arguments=args,
                              config=self.cfg, seed=self.args.seed, threads=self.args.threads, status=status,
                              error=error, log=self.log, outputs=self.outputs, **self.extra)


def _vit(cfg):
    from .model.config import HeadConfig, MaeConfig, ViTConfig
    if cfg["model"]["preset"] == "base":
        return ViTConfig.base(), MaeConfig.base(), HeadConfig.base()
    return ViTConfig.tiny(), MaeConfig.tiny(), HeadConfig.tiny()


def _load_data(path: str):
    from .data.io import load_dataset
    if not Path(path).is_dir():
        raise ConfigError(f"dataset directory {path} does not exist")
    return load_dataset(path)


def _dataset(run: Run, path: str | None, source: str, n_poses: int, seed: int):
    from .data.synth import generate_dataset
    from .data.types import Source
    if path:
        ds = _load_data(path)
        if ds.source.value != source:
            raise ConfigError(f"{path}: expected a {source} dataset, found {ds.source.value}")
        return ds
    run.note(f"generating {n_poses} {source} poses (seed {seed})")
    return generate_dataset(n_poses, seed, Source(source))


def _pretrain_cfg(cfg):
    from .train.config import PretrainConfig
    vit, mae, _ = _vit(cfg)
    p = cfg["pretrain"]
    return PretrainConfig(vit, mae, p["batch_size"], p["base_lr"], p["warmup"], p["weight_decay"],
                          p["holdout_fraction"])


def _train_cfgs(cfg, seed: int):
    from .train.config import TrainConfig
    scale = cfg["run"]["epoch_scale"]
    out = []
    for sec, preset in (("finetune_slp", TrainConfig.slp_desk(seed)), ("finetune_smal", TrainConfig.smal(seed))):
        c = cfg[sec]
        out.append(replace(preset, batch_size=c["batch_size"], base_lr=c["base_lr"],
                           epochs=max(1, int(round(c["epochs"] * scale))), warmup=c["warmup"]))
    return out


def predictions_json(samples, joints) -> dict:
    return {"predictions": [{"pose_id": s.pose_id, "cover": s.cover.value,
                             "joints": [[float(x), float(y)] for x, y in j]}
                            for s, j in zip(samples, joints)]}


def _read_predictions(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
        out = {}
        for rec in data["predictions"]:
            j = np.asarray(rec["joints"], dtype=np.float64)
            if j.shape != (14, 2):
                raise ValueError(f"pose_id {rec['pose_id']}: joints must be 14 x 2")
            out[(int(rec["pose_id"]), str(rec["cover"]))] = j
        return out
    except (OSError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}: invalid predictions file: {e}") from None


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# -- commands ----------------------------------------------------------------------

def cmd_gen_data(run: Run) -> None:
    from .data.io import save_dataset
    from .data.synth import generate_dataset
    from .data.types import Source
    n = run.args.poses if run.args.poses is not None else run.cfg["data"]["smal_poses"]
    if n < 3 or n % 3:
        raise UsageError(f"--poses must be a positive multiple of 3, got {n}")
    ds = generate_dataset(n, run.args.seed, Source(run.args.source))
    save_dataset(ds, run.out / "dataset")
    run.outputs["dataset"] = str(run.out / "dataset")
    run.note(f"wrote {len(ds)} samples ({n} poses) to {run.out / 'dataset'}")


def cmd_register(run: Run) -> None:
    from .geometry import (LandmarkGrid, apply_homography, estimate_homography_ransac, reprojection_errors,
                           save_calibration, synthetic_camera_homography)
    from .pose import Plane
    a = run.args
    if not 0 <= a.outlier_fraction < 0.5:
        raise UsageError("--outlier-fraction must lie in [0, 0.5)")
    rng = np.random.default_rng(a.seed)
    psm = LandmarkGrid().psm_points()
    truth = synthetic_camera_homography(a.seed)
    cam = apply_homography(truth, psm) + rng.normal(0.0, a.noise, psm.shape) if a.noise > 0 \
        else apply_homography(truth, psm)
    n_out = int(round(a.outlier_fraction * len(psm)))
    bad = rng.choice(len(psm), n_out, replace=False)
    cam[bad] += rng.uniform(40, 120, (n_out, 2)) * rng.choice([-1, 1], (n_out, 2))
    H, mask = estimate_homography_ransac(cam, psm, a.threshold, seed=a.seed, src_plane=Plane.RGB,
                                         dst_plane=Plane.PSM)
    err = reprojection_errors(H, cam[mask], psm[mask])
    rms = float(np.sqrt(np.mean(err ** 2)))
    run.out.mkdir(parents=True, exist_ok=True)
    save_calibration(run.out / "calibration.json", H, int(mask.sum()), rms)
    run.outputs["calibration"] = str(run.out / "calibration.json")
    run.extra["registration"] = {"inliers": int(mask.sum()), "landmarks": len(psm), "rms_sensels": rms,
                                 "planted_outliers": sorted(int(i) for i in bad)}
    run.note(f"{int(mask.sum())}/{len(psm)} inliers, rms {rms:.3g} sensels")


def _hierarchy(run: Run, variant: str, stage_epochs: int, sim_path, real_path):
    from .train.config import StagePlan
    from .train.protocol import run_hierarchy
    plan = StagePlan(variant, stage_epochs)
    corpora = {c for c, _ in plan.stages}
    d = run.cfg["data"]
    sim = _dataset(run, sim_path, "SYNTH_SIM", d["sim_poses"], run.args.seed + 101) if "simulated" in corpora else None
    real = _dataset(run, real_path, "SLP_LIKE", d["slp_poses"], run.args.seed + 202) if "real" in corpora else None
    history: list = []
    ckpt = run_hierarchy(plan, sim, real, _pretrain_cfg(run.cfg), run.args.seed, history=history)
    run.extra["pretrain_log"] = history
    return plan, ckpt


def cmd_pretrain(run: Run) -> None:
    from .model.checkpoint import save_checkpoint
    a = run.args
    if a.stage_epochs < 0:
        raise UsageError("--stage-epochs must be non-negative")
    _, ckpt = _hierarchy(run, a.variant, a.stage_epochs, a.sim, a.real)
    save_checkpoint(ckpt, run.out / "checkpoint")
    run.outputs["checkpoint"] = str(run.out / "checkpoint")
    run.extra["lineage"] = [r.to_dict() for r in ckpt.lineage]
    run.note(f"pretraining done; lineage {[r.stage for r in ckpt.lineage]}")


def _init_checkpoint(run: Run, path: str | None):
    from .model.checkpoint import Checkpoint, load_checkpoint
    if path:
        if not (Path(path) / "config.json").is_file():
            raise ConfigError(f"{path} is not a checkpoint directory")
        return load_checkpoint(path)
    vit, mae, _ = _vit(run.cfg)
    return Checkpoint.fresh(vit, run.args.seed, mae)


def cmd_finetune(run: Run) -> None:
    from .data.splits import SplitPlan, assemble_split, make_folds
    from .model.checkpoint import save_checkpoint
    from .train.protocol import two_stage_finetune
    a, cfg = run.args, run.cfg
    k = cfg["run"]["folds"]
    if not 0 <= a.test_fold < k:
        raise UsageError(f"--test-fold must lie in [0, {k})")
    smal = _dataset(run, a.data, "SMAL_LIKE", cfg["data"]["smal_poses"], a.seed)
    skip = cfg["run"]["skip_stage1"]
    slp = None if skip else _dataset(run, a.slp, "SLP_LIKE", cfg["data"]["slp_poses"], a.seed + 202)
    plan = SplitPlan(make_folds(smal, k, a.seed), 1, 0).with_rotation(a.test_fold)
    slp_cfg, smal_cfg = _train_cfgs(cfg, a.seed)
    res = two_stage_finetune(_init_checkpoint(run, a.init), slp, smal, plan, cfg["run"]["modality"], slp_cfg,
                             smal_cfg, skip_stage1=skip)
    save_checkpoint(res.checkpoint, run.out / "checkpoint")
    _, _, test = assemble_split(smal, plan)
    run.outputs["checkpoint"] = str(run.out / "checkpoint")
    run.extra.update(finetune_log=res.history, best_epoch=res.best_epoch, val_pck=res.val_pck,
                     lineage=[r.to_dict() for r in res.checkpoint.lineage], test_fold=a.test_fold,
                     n_test=len(test))
    run.note(f"best epoch {res.best_epoch}, validation PCK {res.val_pck:.2f}")


def cmd_crossval(run: Run) -> None:
    from .eval.report import emit_report
    from .train.protocol import cross_validate, two_stage_finetune
    a, cfg = run.args, run.cfg
    if a.stage_epochs < 0:
        raise UsageError("--stage-epochs must be non-negative")
    smal = _dataset(run, a.data, "SMAL_LIKE", cfg["data"]["smal_poses"], a.seed)
    skip = cfg["run"]["skip_stage1"]
    slp = None if skip else _dataset(run, a.slp, "SLP_LIKE", cfg["data"]["slp_poses"], a.seed + 202)
    plan, pretrained = _hierarchy(run, a.variant, a.stage_epochs, a.sim, a.slp)
    slp_cfg, smal_cfg = _train_cfgs(cfg, a.seed)
    modality = cfg["run"]["modality"]
    logs = []

    def factory(split):
        run.note(f"fold {split.test_fold}: training (validation fold {split.val_fold})")
        res = two_stage_finetune(pretrained, slp, smal, split, modality, slp_cfg, smal_cfg, skip_stage1=skip)
        logs.append(res.history)
        return res

    name = a.name or plan.label()
    result = cross_validate(factory, smal, cfg["run"]["folds"], a.seed, modality, name, plan.pretraining_info())
    emit_report(result.report, run.out)
    run.outputs["report"] = str(run.out / "report.json")
    run.extra.update(folds=result.runs, finetune_logs=logs, fold_pck=result.pck, fold_nme_mm=result.nme_mm,
                     mean_pck=result.mean_pck, mean_nme_mm=result.mean_nme_mm)
    run.note(f"{name}: mean PCK {result.mean_pck:.2f}, mean NME {result.mean_nme_mm:.2f} mm")


def cmd_eval(run: Run) -> None:
    from .data.types import COVERED
    from .eval.report import emit_report, breakdown
    from .model.checkpoint import load_checkpoint
    from .train.loops import predict
    a = run.args
    ds = _load_data(a.data)
    samples = [s for s in ds.samples if s.cover in COVERED]
    if a.predictions:
        table = _read_predictions(a.predictions)
        missing = [(s.pose_id, s.cover.value) for s in samples if (s.pose_id, s.cover.value) not in table]
        if missing:
            raise ConfigError(f"{a.predictions}: no prediction for {missing[:3]}")
        preds = [table[(s.pose_id, s.cover.value)] for s in samples]
    else:
        preds = [p.joints for p in predict(load_checkpoint(a.checkpoint), samples, run.cfg["run"]["modality"])]
        _write_json(run.out / "predictions.json", predictions_json(samples, preds))
    report = breakdown(np.stack(preds), [s.pose for s in samples], [{"cover": s.cover} for s in samples],
                       name=a.name)
    emit_report(report, run.out)
    run.outputs["report"] = str(run.out / "report.json")
    run.note(f"PCK {report.mean_pck:.2f}, NME {report.mean_nme_mm:.2f} mm on {len(samples)} covered samples")


def cmd_report(run: Run) -> None:
    from .eval.report import compare, emit_report, load_report
    reports = {}
    for path in run.args.inputs:
        try:
            r = load_report(path)
        except (OSError, ValueError, KeyError) as e:
            raise ConfigError(f"{path}: cannot read report: {e}") from None
        if len(r.per_fold) != 1:
            raise ConfigError(f"{path}: report must carry exactly one cross-validation row")
        name = next(iter(r.per_fold))
        if name in reports:
            raise ConfigError(f"duplicate model name {name!r} in inputs")
        reports[name] = r
    if run.args.baseline not in reports:
        raise UsageError(f"--baseline {run.args.baseline!r} not among {sorted(reports)}")
    merged = compare(reports, run.args.baseline, run.args.comparisons)
    emit_report(merged, run.out)
    run.outputs["report"] = str(run.out / "report.json")
    run.note(f"merged {len(reports)} reports")


def cmd_overlay(run: Run) -> None:
    from .model.checkpoint import load_checkpoint
    from .overlay import render_overlay, save_png
    from .train.loops import predict
    a = run.args
    ds = _load_data(a.data)
    samples = list(ds.samples[:max(a.limit, 0)])
    if a.predictions:
        table = _read_predictions(a.predictions)
        preds = [table.get((s.pose_id, s.cover.value)) for s in samples]
    elif a.checkpoint:
        preds = [p.joints for p in predict(load_checkpoint(a.checkpoint), samples, run.cfg["run"]["modality"])]
    else:
        preds = [None] * len(samples)
    files = []
    for s, p in zip(samples, preds):
        path = run.out / "overlays" / f"{s.pose_id:05d}_{s.cover.value.lower()}.png"
        save_png(path, render_overlay(s.depth, s.pose.joints, p))
        files.append(str(path))
    run.outputs["overlays"] = files
    run.note(f"wrote {len(files)} overlays")


HANDLERS = {
    "gen-data": cmd_gen_data, "register": cmd_register, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "crossval": cmd_crossval, "eval": cmd_eval, "report": cmd_report, "overlay": cmd_overlay,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"covpose: choose a command from {', '.join(COMMANDS)}")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(args, cfg)
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=args.threads):
            HANDLERS[args.command](run)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        run.manifest("config-error", str(e))
        return EXIT_CONFIG
    except Exception as e:      # noqa: BLE001 - any failure becomes exit 3 with a partial manifest
        from .data.io import ManifestError
        if isinstance(e, ManifestError):
            print(f"config error: {e}", file=sys.stderr)
            run.manifest("config-error", str(e))
            return EXIT_CONFIG
        print(f"runtime error: {e}", file=sys.stderr)
        run.log.append(traceback.format_exc())
        run.manifest("failed", f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
    run.manifest("ok")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
