"""Dataset directories: ``manifest.json`` plus one STEN file per raster."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from ..numerics import sten
from ..pose import N_JOINTS, Plane, Pose
from .types import Category, Cover, Dataset, Sample, Source

SCHEMA_VERSION = 1

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "source", "seed", "provenance", "samples"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "source": {"enum": [s.value for s in Source]},
        "seed": {"type": ["integer", "null"]},
        "provenance": {"type": "object"},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["pose_id", "cover", "category", "joints", "depth_file", "pressure_file", "shape"],
                "properties": {
                    "pose_id": {"type": "integer", "minimum": 0},
                    "cover": {"enum": [c.value for c in Cover]},
                    "category": {"enum": [c.value for c in Category]},
                    "joints": {
                        "type": "array", "minItems": N_JOINTS, "maxItems": N_JOINTS,
                        "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
                    },
                    "elevation": {"type": ["array", "null"], "items": {"type": "number"}},
                    "depth_file": {"type": "string"},
                    "pressure_file": {"type": "string"},
                    "shape": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                },
            },
        },
    },
}


class ManifestError(ValueError):
    pass


def save_dataset(dataset: Dataset, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for s in dataset.samples:
        stem = f"{s.pose_id:05d}_{s.cover.value.lower()}"
        sten.save(root / f"{stem}_depth.sten", s.depth)
        sten.save(root / f"{stem}_pressure.sten", s.pressure)
        records.append({
            "pose_id": s.pose_id,
            "cover": s.cover.value,
            "category": s.category.value,
            # repr round-trips float64 exactly through JSON
            "joints": [[float(x), float(y)] for x, y in s.pose.joints],
            "elevation": None if s.pose.elevation is None else [float(v) for v in s.pose.elevation],
            "depth_file": f"{stem}_depth.sten",
            "pressure_file": f"{stem}_pressure.sten",
            "shape": list(s.depth.shape),
        })
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "source": dataset.source.value,
        "seed": dataset.manifest.get("seed"),
        "provenance": dataset.manifest,
        "samples": records,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return root


def load_dataset(path) -> Dataset:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise ManifestError(f"{mpath}: manifest not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{mpath}: invalid JSON ({e})") from None
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path)
        raise ManifestError(f"{mpath}: schema error at {where or '<root>'}: {e.message}") from None
    samples = []
    for rec in manifest["samples"]:
        rasters = []
        for key in ("depth_file", "pressure_file"):
            f = root / rec[key]
            if not f.exists():
                raise ManifestError(f"{mpath}: raster file missing: {f}")
            arr = sten.load(f)
            if list(arr.shape) != rec["shape"]:
                raise ManifestError(f"{f}: shape {list(arr.shape)} does not match manifest {rec['shape']}")
            rasters.append(arr)
        pose = Pose(np.array(rec["joints"], dtype=np.float64), Plane.PSM, rec.get("elevation"))
        samples.append(Sample(pose, Cover(rec["cover"]), Category(rec["category"]), rec["pose_id"],
                              rasters[0], rasters[1]))
    return Dataset(tuple(samples), Source(manifest["source"]), manifest["provenance"])
