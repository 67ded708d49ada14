import json
import shutil
from importlib import resources

import numpy as np
import pytest

from pointref.cli import main
from pointref.config import RunConfig, load_config
from pointref.heatmap import load_heatmap
from pointref.io import load_annotations, load_final

FIXTURE = resources.files("pointref") / "data" / "synthetic"


@pytest.fixture
def data(tmp_path):
    for name in ("annotations.jsonl", "predictions.jsonl", "embeddings.bin"):
        shutil.copy(FIXTURE / name, tmp_path / name)
    return tmp_path


def test_gen_heatmaps(data):
    out = data / "heat"
    assert main(["gen-heatmaps", str(data / "annotations.jsonl"), "--out-dir", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert len(files) == 40 and files[0] == "syn000.h2f.gaussian.png"
    h = load_heatmap(out / "syn000.h2f.gaussian.png")
    assert (h.width, h.height) == (160, 120) and h.values.max() == 1.0


def test_gen_heatmaps_merged_conic_resized(data):
    out = data / "heat"
    argv = ["gen-heatmaps", str(data / "annotations.jsonl"), "--out-dir", str(out), "--line", "merged",
            "--style", "conic", "--half-angle-deg", "30", "--size", "80x60", "--jobs", "2"]
    assert main(argv) == 0
    h = load_heatmap(out / "syn003.merged.conic.png")
    assert (h.width, h.height) == (80, 60)
    assert set(np.unique(h.values)) <= {0.0, 1.0}


def test_gen_heatmaps_skips_degenerate(data, caplog):
    ann = data / "annotations.jsonl"
    lines = ann.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["keypoints"]["eye"] = rec["keypoints"]["fingertip"]
    lines[1] = json.dumps(rec)
    ann.write_text("\n".join(lines) + "\n")
    assert main(["gen-heatmaps", str(ann), "--out-dir", str(data / "h"), "--line", "h2f"]) == 0
    assert len(list((data / "h").iterdir())) == 19
    assert "skipping syn000" in caplog.text


@pytest.mark.parametrize("strategy", ["confidence", "clip-top1", "clip-top2", "clip-fusion", "cape"])
def test_ensemble_then_evaluate(data, strategy, capsys):
    final = data / "final.jsonl"
    assert main(["ensemble", str(data / "predictions.jsonl"), "--embeddings", str(data / "embeddings.bin"),
                 "--strategy", strategy, "--out", str(final)]) == 0
    header, finals = load_final(final)
    assert header["strategy"] == strategy and len(finals) == 20
    assert (data / "final.jsonl.emb").exists()
    assert main(["evaluate", str(data / "annotations.jsonl"), str(final), "--out-dir", str(data / "rep")]) == 0
    report = json.loads((data / "rep" / "report.json").read_text())
    assert report["buckets"]["all"]["count"] == 20
    assert report["buckets"]["all"]["clip_count"] == 20
    assert report["meta"]["strategy"] == strategy
    capsys.readouterr()
    assert main(["report", str(data / "rep" / "report.json")]) == 0
    assert capsys.readouterr().out == (data / "rep" / "report.txt").read_text()


def test_ensemble_without_embeddings(data):
    final = data / "final.jsonl"
    assert main(["ensemble", str(data / "predictions.jsonl"), "--strategy", "confidence", "--out", str(final)]) == 0
    assert main(["ensemble", str(data / "predictions.jsonl"), "--strategy", "cape", "--out", str(final)]) == 1


def test_evaluate_reports_missing_predictions(data):
    final = data / "final.jsonl"
    main(["ensemble", str(data / "predictions.jsonl"), "--strategy", "confidence", "--out", str(final)])
    lines = final.read_text().splitlines()
    final.write_text("\n".join(lines[:-2]) + "\n")
    assert main(["evaluate", str(data / "annotations.jsonl"), str(final), "--out-dir", str(data / "rep")]) == 0
    meta = json.loads((data / "rep" / "report.json").read_text())["meta"]
    assert meta["n_missing_predictions"] == "2" and meta["n_evaluated"] == "18"


def test_loss_check(capsys):
    assert main(["loss-check", "--seed", "1", "--trials", "20"]) == 0
    assert "max relative gradient error" in capsys.readouterr().out


def test_loss_check_fails_with_huge_epsilon():
    assert main(["loss-check", "--trials", "20", "--epsilon", "0.05"]) == 1


def test_exit_codes(data, tmp_path):
    assert main(["gen-heatmaps", str(tmp_path / "missing.jsonl"), "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"image_id": "x"}\n')
    assert main(["gen-heatmaps", str(bad), "--out-dir", str(tmp_path)]) == 1
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("ensemble: {fusion_scale: -1}\n")
    assert main(["--config", str(cfg), "loss-check", "--trials", "1"]) == 1


def test_config_file_overrides(data, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("ensemble:\n  top2_threshold: 0.5\nevaluation:\n  iou_thresholds: [0.1, 0.9]\n")
    final = data / "final.jsonl"
    assert main(["--config", str(cfg), "ensemble", str(data / "predictions.jsonl"), "--embeddings",
                 str(data / "embeddings.bin"), "--strategy", "clip-top2", "--out", str(final)]) == 0
    assert load_final(final)[0]["config"]["top2_threshold"] == 0.5
    assert main(["--config", str(cfg), "evaluate", str(data / "annotations.jsonl"), str(final),
                 "--out-dir", str(data / "rep")]) == 0
    acc = json.loads((data / "rep" / "report.json").read_text())["buckets"]["all"]["accuracy"]
    assert sorted(acc) == ["0.10", "0.90"]


def test_out_dir_falls_back_to_config(data, tmp_path):
    ann = str(data / "annotations.jsonl")
    assert main(["gen-heatmaps", ann]) == 1
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"output:\n  dir: {data / 'run'}\n")
    assert main(["--config", str(cfg), "gen-heatmaps", ann, "--line", "h2f"]) == 0
    assert len(list((data / "run" / "heatmaps").iterdir())) == 20
    final = str(data / "final.jsonl")
    assert main(["ensemble", str(data / "predictions.jsonl"), "--embeddings", str(data / "embeddings.bin"),
                 "--out", final]) == 0
    assert main(["--config", str(cfg), "evaluate", ann, final]) == 0
    assert (data / "run" / "report" / "report.json").exists()


def test_make_fixture_is_deterministic(tmp_path):
    assert main(["make-fixture", str(tmp_path / "a")]) == 0
    for name in ("annotations.jsonl", "predictions.jsonl", "embeddings.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (FIXTURE / name).read_bytes()
    assert len(load_annotations(tmp_path / "a" / "annotations.jsonl")) == 20


def test_default_config_and_unknown_keys(tmp_path):
    assert load_config(None) == RunConfig()
    cfg = tmp_path / "c.yaml"
    cfg.write_text("heatmap: {sigma: 12, cone_half_angle_deg: 30, colour: red}\n")
    with pytest.raises(ValueError):
        load_config(cfg)
    cfg.write_text("heatmap: {sigma: 12, cone_half_angle_deg: 30}\n")
    c = load_config(cfg)
    assert c.heatmap.sigma == 12 and c.heatmap.cone_half_angle == pytest.approx(np.radians(30))
    assert c.to_dict()["heatmap"]["cone_half_angle_deg"] == pytest.approx(30)
