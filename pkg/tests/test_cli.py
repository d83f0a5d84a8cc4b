import json

import numpy as np
import pytest
from PIL import Image

from covpose.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, load_config, main, predictions_json
from covpose.data import load_dataset

DESK = """
[data]
smal_poses = 15
slp_poses = 9
sim_poses = 9

[pretrain]
batch_size = 16

[finetune_slp]
batch_size = 8
epochs = 10

[finetune_smal]
batch_size = 8
epochs = 10
"""


@pytest.fixture(scope="module")
def desk_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "desk.cfg"
    p.write_text(DESK)
    return str(p)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--poses", "15", "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out / "dataset"


def manifest(out):
    return json.loads((out / "run_manifest.json").read_text())


def test_gen_data_300_poses(tmp_path):
    assert main(["gen-data", "--poses", "300", "--seed", "7", "--out", str(tmp_path)]) == EXIT_OK
    ds = load_dataset(tmp_path / "dataset")
    assert len(ds) == 900
    m = manifest(tmp_path)
    assert m["status"] == "ok" and m["seed"] == 7 and m["config"]["run"]["epoch_scale"] == 0.1


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["fly", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["gen-data"]) == EXIT_USAGE                      # --out missing
    assert main(["gen-data", "--poses", "10", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["gen-data", "--threads", "0", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    for text in ("[data]\nsmal_poses = ten\n", "[nope]\nx = 1\n", "[data]\nunknown = 1\n",
                 "[run]\nepoch_scale = 2\n", "no section line\n"):
        bad.write_text(text)
        assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["gen-data", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["eval", "--data", str(tmp_path / "nowhere"), "--predictions", "x.json",
                 "--out", str(tmp_path / "e")]) == EXIT_CONFIG
    assert manifest(tmp_path / "e")["status"] == "config-error"


def test_config_resolution(desk_cfg):
    cfg = load_config(desk_cfg)
    assert cfg["data"]["smal_poses"] == 15 and cfg["finetune_smal"]["base_lr"] == 1e-4
    assert load_config(None)["data"]["smal_poses"] == 300


def test_eval_ground_truth_gives_perfect_scores(tmp_path, small_data):
    ds = load_dataset(small_data)
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps(predictions_json(ds.samples, [s.pose.joints for s in ds.samples])))
    out = tmp_path / "eval"
    assert main(["eval", "--data", str(small_data), "--predictions", str(pred), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["mean_pck"] == 100.0 and rep["mean_nme_mm"] == 0.0
    assert (out / "report.txt").read_text().count("100.00") >= 14


def test_eval_rejects_bad_predictions(tmp_path, small_data):
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps({"predictions": [{"pose_id": 0, "cover": "THIN", "joints": [[0, 0]]}]}))
    assert main(["eval", "--data", str(small_data), "--predictions", str(pred),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    pred.write_text(json.dumps({"predictions": []}))
    assert main(["eval", "--data", str(small_data), "--predictions", str(pred),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_runtime_failure_writes_partial_manifest(tmp_path, small_data):
    bogus = tmp_path / "ckpt"
    bogus.mkdir()
    (bogus / "config.json").write_text("{}")
    out = tmp_path / "o"
    code = main(["eval", "--data", str(small_data), "--checkpoint", str(bogus), "--out", str(out)])
    assert code == EXIT_RUNTIME
    m = manifest(out)
    assert m["status"] == "failed" and m["error"] and m["log"]


def test_register(tmp_path):
    out = tmp_path / "reg"
    assert main(["register", "--outlier-fraction", "0.3", "--noise", "0.2", "--seed", "4", "--out", str(out)]) == 0
    m = manifest(out)
    reg = m["registration"]
    assert reg["landmarks"] == 36 and reg["inliers"] >= 25 and reg["rms_sensels"] < 1.0
    assert (out / "calibration.json").is_file()


def test_overlay_pngs(tmp_path, small_data):
    out = tmp_path / "ov"
    assert main(["overlay", "--data", str(small_data), "--limit", "3", "--out", str(out)]) == EXIT_OK
    files = sorted((out / "overlays").glob("*.png"))
    assert len(files) == 3
    img = np.asarray(Image.open(files[0]))
    assert img.dtype == np.uint8 and img.shape == (224, 224)
    assert img.max() == 255          # ground-truth skeleton intensity


def test_pretrain_finetune_eval_pipeline(tmp_path, desk_cfg, small_data):
    pre = tmp_path / "pre"
    assert main(["pretrain", "--variant", "S", "--stage-epochs", "1", "--config", desk_cfg, "--out", str(pre)]) == 0
    assert [r["stage"] for r in manifest(pre)["lineage"]] == ["MAE-sim"]
    ft = tmp_path / "ft"
    assert main(["finetune", "--init", str(pre / "checkpoint"), "--data", str(small_data), "--config", desk_cfg,
                 "--test-fold", "2", "--out", str(ft)]) == 0
    m = manifest(ft)
    assert [r["stage"] for r in m["lineage"]] == ["MAE-sim", "finetune-SLP", "finetune-SMaL"]
    assert m["n_test"] == 6
    ev = tmp_path / "ev"
    assert main(["eval", "--data", str(small_data), "--checkpoint", str(ft / "checkpoint"), "--out", str(ev)]) == 0
    assert (ev / "predictions.json").is_file() and (ev / "report.txt").is_file()


def test_crossval_deterministic_and_report_merge(tmp_path, desk_cfg):
    outs = []
    for i in range(2):
        out = tmp_path / f"cv{i}"
        assert main(["crossval", "--variant", "S", "--stage-epochs", "15", "--seed", "1", "--config", desk_cfg,
                     "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for name in ("report.json", "report.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rep = json.loads((outs[0] / "report.json").read_text())
    assert list(rep["per_fold"]) == ["S-15"] and len(rep["per_fold"]["S-15"]["pck"]) == 5
    assert len(manifest(outs[0])["folds"]) == 5

    base = tmp_path / "base"
    assert main(["crossval", "--variant", "BASELINE", "--seed", "1", "--config", desk_cfg, "--out", str(base)]) == 0
    merged = tmp_path / "merged"
    assert main(["report", "--inputs", str(outs[0]), str(base), "--baseline", "Base", "--comparisons", "6",
                 "--out", str(merged)]) == 0
    text = (merged / "report.txt").read_text()
    assert "S-15 vs Base" in text and "0.008333" in text
    assert main(["report", "--inputs", str(outs[0]), str(outs[1]), "--baseline", "S-15",
                 "--out", str(tmp_path / "dup")]) == EXIT_CONFIG
