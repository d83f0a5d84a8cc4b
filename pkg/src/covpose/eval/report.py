"""Per-joint / per-cover / per-fold tables, significance blocks and report files."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.types import Cover, Modality
from ..pose import JOINT_NAMES
from .metrics import MetricConfig, correct_mask, sensel_distances
from .stats import DegenerateTestError, paired_t_test

AVERAGE = "Average"
REPORT_KEYS = ("config", "per_joint", "per_cover", "per_fold", "mean_pck", "mean_nme_mm", "significance")
COVER_LABEL = {Cover.UNCOVERED.value: "No Cover", Cover.THIN.value: "Thin Cover", Cover.THICK.value: "Thick Cover"}


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class EvalReport:
    config: dict
    per_joint: dict
    per_cover: dict
    per_fold: dict
    mean_pck: float
    mean_nme_mm: float
    significance: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        missing = [k for k in REPORT_KEYS if k not in d]
        if missing:
            raise ValueError(f"report is missing keys {missing}")
        return cls(**{k: d[k] for k in REPORT_KEYS})


def _meta(m, key: str):
    v = m.get(key) if isinstance(m, dict) else getattr(m, key, None)
    return v.value if hasattr(v, "value") else v


def breakdown(preds, gts, metadata, cfg: MetricConfig = MetricConfig(), name: str = "model",
              pretraining: dict | None = None) -> EvalReport:
    """Tables keyed by joint x cover, cover averages, and per-fold rows when folds are given.

    ``metadata`` has one entry per prediction with a ``cover`` and, optionally,
    a ``fold`` (all or none).
    """
    if len(metadata) != len(preds):
        raise ValueError(f"{len(preds)} predictions but {len(metadata)} metadata entries")
    covers = []
    folds = []
    for i, m in enumerate(metadata):
        c = _meta(m, "cover")
        if c is None:
            raise ValueError(f"prediction {i} has no cover metadata")
        covers.append(Cover(c).value)
        folds.append(_meta(m, "fold"))
    has_folds = [f is not None for f in folds]
    if any(has_folds) and not all(has_folds):
        raise ValueError(f"prediction {has_folds.index(False)} has no fold metadata")
    covers = np.array(covers)
    ok = correct_mask(preds, gts, cfg)
    err = sensel_distances(preds, gts, cfg) * cfg.mm_per_sensel

    cover_cols = [c.value for c in Cover if c.value in set(covers)]
    n_j = ok.shape[1]
    pck_cols, nme_cols = [], []
    for c in cover_cols:
        sel = covers == c
        pck_cols.append([100.0 * ok[sel, j].sum() / sel.sum() for j in range(n_j)])
        nme_cols.append([math.fsum(err[sel, j]) / sel.sum() for j in range(n_j)])

    def table(cols):
        rows = [[cols[c][j] for c in range(len(cols))] for j in range(n_j)]
        rows = [r + [_mean(r)] for r in rows]
        rows.append([_mean(r[c] for r in rows) for c in range(len(cols) + 1)])
        return rows

    pck_t, nme_t = table(pck_cols), table(nme_cols)
    per_joint = {
        "model": name,
        "rows": list(JOINT_NAMES[:n_j]) + [AVERAGE],
        "columns": cover_cols + [AVERAGE],
        "pck": pck_t,
        "nme_mm": nme_t,
    }
    per_cover = {"model": name}
    for i, c in enumerate(cover_cols + [AVERAGE]):
        per_cover[c] = {"pck": pck_t[-1][i], "nme_mm": nme_t[-1][i]}

    per_fold = {}
    if all(has_folds) and folds:
        labels = sorted(set(int(f) for f in folds))
        fa = np.array([int(f) for f in folds])
        fp = [_mean(100.0 * ok[fa == f].sum(axis=0) / (fa == f).sum()) for f in labels]
        fn = [_mean(err[fa == f].sum(axis=0) / (fa == f).sum()) for f in labels]
        per_fold[name] = {
            "folds": labels,
            "pck": fp,
            "nme_mm": fn,
            "mean_pck": _mean(fp),
            "mean_nme_mm": _mean(fn),
            "pretraining": pretraining or {},
        }
    return EvalReport(cfg.to_dict(), per_joint, per_cover, per_fold, pck_t[-1][-1], nme_t[-1][-1], [])


def significance_entry(name_a: str, a, name_b: str, b, alpha: float) -> dict:
    diff = _mean(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    try:
        t, p = paired_t_test(a, b)
        return {"pair": [name_a, name_b], "mean_diff": diff, "t": t, "p": p, "alpha_corrected": alpha,
                "significant": bool(p < alpha), "note": ""}
    except DegenerateTestError as e:
        return {"pair": [name_a, name_b], "mean_diff": diff, "t": None, "p": None, "alpha_corrected": alpha,
                "significant": False, "note": str(e)}


def compare(reports: dict[str, EvalReport], baseline: str, n_comparisons: int | None = None,
            alpha: float = 0.05) -> EvalReport:
    """Merge cross-validated reports into one fold table with paired tests against ``baseline``.

    Per-joint and per-cover tables are taken from the model with the best mean
    fold PCK. The significance level is Bonferroni-corrected over
    ``n_comparisons`` (default: every non-baseline model).
    """
    if baseline not in reports:
        raise ValueError(f"baseline {baseline!r} not among reports {sorted(reports)}")
    rows = {}
    for name, r in reports.items():
        if len(r.per_fold) != 1:
            raise ValueError(f"report {name!r} must carry exactly one per-fold row")
        rows[name] = next(iter(r.per_fold.values()))
    base = rows[baseline]
    others = [n for n in reports if n != baseline]
    k = n_comparisons if n_comparisons is not None else max(len(others), 1)
    if k < 1:
        raise ValueError("n_comparisons must be at least 1")
    sig = []
    for n in others:
        if rows[n]["folds"] != base["folds"]:
            raise ValueError(f"fold labels of {n!r} differ from the baseline")
        sig.append(significance_entry(n, rows[n]["pck"], baseline, base["pck"], alpha / k))
    best = max(reports, key=lambda n: (rows[n]["mean_pck"], -list(reports).index(n)))
    b = reports[best]
    return EvalReport(b.config, b.per_joint, b.per_cover, rows, b.mean_pck, b.mean_nme_mm, sig)


# -- text layout -------------------------------------------------------------

def _fmt(v, digits: int = 2) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def _grid(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "-" * len(line(header))
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


def fold_table(per_fold: dict) -> str:
    n = max((len(r["folds"]) for r in per_fold.values()), default=0)
    labels = next(iter(per_fold.values()))["folds"] if per_fold else []
    header = ["Model", "Synth", "Real", "Epochs"] + [str(f + 1) for f in labels] + ["PCK", "NME"]
    rows = []
    for name, r in per_fold.items():
        pre = r.get("pretraining", {})
        rows.append([name, "x" if pre.get("synth") else "-", "x" if pre.get("real") else "-",
                     str(pre["epochs"]) if pre.get("epochs") else "-"]
                    + [_fmt(v) for v in r["pck"]] + [""] * (n - len(r["pck"]))
                    + [_fmt(r["mean_pck"]), _fmt(r["mean_nme_mm"], 1)])
    return _grid(header, rows)


def joint_table(per_joint: dict, metric: str) -> str:
    header = ["Joint"] + [COVER_LABEL.get(c, c) for c in per_joint["columns"]]
    digits = 2 if metric == "pck" else 1
    rows = [[name] + [_fmt(v, digits) for v in vals] for name, vals in zip(per_joint["rows"], per_joint[metric])]
    return _grid(header, rows)


def significance_block(sig: list) -> str:
    if not sig:
        return "no comparisons\n"
    rows = [[f"{e['pair'][0]} vs {e['pair'][1]}", _fmt(e["mean_diff"], 3), _fmt(e["t"], 3), _fmt(e["p"], 4),
             _fmt(e["alpha_corrected"], 6), "yes" if e["significant"] else "no"] for e in sig]
    return _grid(["Pair", "Mean diff", "t", "p", "alpha", "Significant"], rows)


def format_report(report: EvalReport) -> str:
    parts = []
    if report.per_fold:
        parts += ["Fold accuracy (PCK) and averages", fold_table(report.per_fold)]
    model = report.per_joint.get("model", "model")
    parts += [f"Per-joint PCK of {model}", joint_table(report.per_joint, "pck"),
              f"Per-joint NME (mm) of {model}", joint_table(report.per_joint, "nme_mm"),
              "Paired t-tests on fold PCK", significance_block(report.significance),
              f"mean PCK {report.mean_pck:.2f}  mean NME {report.mean_nme_mm:.2f} mm"]
    return "\n".join(parts) + "\n"


def emit_report(report: EvalReport, path) -> tuple[Path, Path]:
    """Write ``report.json`` and ``report.txt`` under directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    jpath, tpath = root / "report.json", root / "report.txt"
    jpath.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    tpath.write_text(format_report(report))
    return jpath, tpath


def load_report(path) -> EvalReport:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return EvalReport.from_dict(json.loads(p.read_text()))


# -- modality / training-data ablation --------------------------------------

ABLATION_TRAINING = ("SLP + SMaL", "SMaL Only")
ABLATION_MODALITIES = (Modality.BOTH.value, Modality.DEPTH_ONLY.value, Modality.PSM_ONLY.value)
MODALITY_LABEL = {Modality.BOTH.value: "Both", Modality.DEPTH_ONLY.value: "Depth", Modality.PSM_ONLY.value: "PSM"}


@dataclass(frozen=True)
class AblationTable:
    """Mean PCK per model for each (training data, modality) cell."""

    models: list
    cells: dict          # model -> {training -> {modality -> pck}}

    def column_order(self) -> list[tuple[str, str]]:
        return [(t, m) for t in ABLATION_TRAINING for m in ABLATION_MODALITIES]

    def row(self, model: str) -> list[float]:
        return [self.cells[model][t][m] for t, m in self.column_order()]

    def to_dict(self) -> dict:
        return {"models": list(self.models), "training": list(ABLATION_TRAINING),
                "modalities": list(ABLATION_MODALITIES), "cells": self.cells}

    @classmethod
    def from_dict(cls, d: dict) -> "AblationTable":
        return cls(list(d["models"]), d["cells"])

    def format(self) -> str:
        header = ["Model"] + [MODALITY_LABEL[m] for _, m in self.column_order()]
        rows = [[m] + [_fmt(v) for v in self.row(m)] for m in self.models]
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        k = len(ABLATION_MODALITIES)
        spans = [sum(widths[1 + g * k:1 + (g + 1) * k]) + 2 * (k - 1) for g in range(len(ABLATION_TRAINING))]
        groups = " " * widths[0] + "".join("  " + t.center(w) for t, w in zip(ABLATION_TRAINING, spans))
        return groups.rstrip() + "\n" + _grid(header, rows)


def ablation_table(results: dict) -> AblationTable:
    """Build the grid from ``{(model, training, modality): pck}`` covering every cell."""
    models = []
    cells: dict = {}
    for (model, training, modality), v in results.items():
        modality = Modality(modality).value
        if training not in ABLATION_TRAINING:
            raise ValueError(f"unknown training arm {training!r}")
        if model not in cells:
            models.append(model)
            cells[model] = {t: {} for t in ABLATION_TRAINING}
        cells[model][training][modality] = float(v)
    for model in models:
        for t in ABLATION_TRAINING:
            missing = [m for m in ABLATION_MODALITIES if m not in cells[model][t]]
            if missing:
                raise ValueError(f"ablation cell missing for {model!r}, {t!r}, {missing}")
    return AblationTable(models, cells)


def emit_ablation(table: AblationTable, path) -> tuple[Path, Path]:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    jpath, tpath = root / "ablation.json", root / "ablation.txt"
    jpath.write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n")
    tpath.write_text(table.format())
    return jpath, tpath
