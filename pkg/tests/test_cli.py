import csv
import json

import pytest

from avlbp import classify, features, imaging, skeleton
from avlbp.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Synthetic images plus the features/train/predict chain, computed once."""
    d = tmp_path_factory.mktemp("cli")
    small = ["--set", "synth_images=4", "--set", "n_trees=15"]
    assert main(["synth", "-o", str(d / "syn"), *small]) == 0
    imgs = sorted(str(p) for p in (d / "syn").glob("*_image.png"))
    masks = sorted(str(p) for p in (d / "syn").glob("*_mask.png"))
    assert main(["features", "--images", *imgs, "--masks", *masks, "-o", str(d / "lbp.csv")]) == 0
    assert main(["features", "--images", *imgs, "--masks", *masks, "--schema", "rgb",
                 "-o", str(d / "rgb.csv")]) == 0
    assert main(["train", str(d / "lbp.csv"), "-o", str(d / "model.bin"), *small]) == 0
    assert main(["predict", str(d / "model.bin"), str(d / "lbp.csv"), "-o", str(d / "pred.csv")]) == 0
    return d


def test_synth_writes_pairs(workdir):
    names = sorted(p.name for p in (workdir / "syn").iterdir())
    assert names[:2] == ["synth000_image.png", "synth000_mask.png"] and len(names) == 8


def test_features_csv_uses_image_stems(workdir):
    ds = features.load_dataset_csv(workdir / "lbp.csv")
    assert ds.schema_id == "lbp:P8R1ri,P8R2ri;w15;green"
    assert set(ds.image_ids) == {f"synth{i:03d}_image" for i in range(4)}
    assert len(ds) == 40


def test_predictions_csv(workdir):
    lines = (workdir / "pred.csv").read_text().splitlines()
    assert lines[0] == "image_id,segment_id,label,artery_score"
    assert len(lines) == 41


def test_predict_schema_mismatch_exits_2(workdir, capsys):
    code = main(["predict", str(workdir / "model.bin"), str(workdir / "rgb.csv"), "-o", str(workdir / "x.csv")])
    assert code == 2
    assert "schema" in capsys.readouterr().err
    assert not (workdir / "x.csv").exists()


def test_evaluate_writes_text_and_json(workdir):
    prefix = workdir / "report"
    assert main(["evaluate", str(workdir / "lbp.csv"), "-o", str(prefix), "--folds", "5",
                 "--set", "n_trees=10"]) == 0
    doc = json.loads((workdir / "report.json").read_text())
    assert doc["folds"] == 5 and doc["n_samples"] == 40
    assert doc["config"]["cv_folds"] == 5 and doc["config"]["n_trees"] == 10
    assert "recognition_rate:" in (workdir / "report.txt").read_text()


def test_evaluate_with_spec_file(workdir):
    spec = workdir / "spec.json"
    spec.write_text(json.dumps({"kind": "naive_bayes", "seed": 0}))
    assert main(["evaluate", str(workdir / "lbp.csv"), "-o", str(workdir / "nb"), "--spec", str(spec),
                 "--folds", "4"]) == 0
    assert json.loads((workdir / "nb.json").read_text())["spec"]["kind"] == "naive_bayes"


def test_compare_table(workdir):
    out = workdir / "table.txt"
    assert main(["compare", f"lbp={workdir / 'lbp.csv'}", f"rgb={workdir / 'rgb.csv'}",
                 "--classifiers", "naive_bayes,cart", "--folds", "4", "-o", str(out)]) == 0
    text = out.read_text()
    assert "Ranking" in text and "naive_bayes" in text and "Ave. AUC" in text


def test_segment_skeletonize_overlay(workdir):
    img_path = workdir / "syn" / "synth000_image.png"
    assert main(["segment", str(img_path), "-o", str(workdir / "vessels.png"),
                 "--mfr", str(workdir / "mfr.bin")]) == 0
    assert main(["skeletonize", str(workdir / "vessels.png"), "-o", str(workdir / "segs.txt")]) == 0
    segs = skeleton.load_segments(workdir / "segs.txt")
    assert len(segs) == 10
    assert main(["overlay", str(img_path), str(workdir / "pred.csv"), "--segments", str(workdir / "segs.txt"),
                 "-o", str(workdir / "overlay.png")]) == 0
    out = imaging.load_image(workdir / "overlay.png")
    with open(workdir / "pred.csv", newline="") as fh:
        preds = {int(r["segment_id"]): r["label"] for r in csv.DictReader(fh)
                 if r["image_id"] == "synth000_image"}
    for seg in segs:
        colour = (255, 0, 0) if preds[seg.id] == "artery" else (0, 0, 255)
        px = out[seg.points[:, 1], seg.points[:, 0]]
        assert (px == colour).all()


def test_artifacts_reproducible(workdir, tmp_path):
    d = tmp_path
    imgs = sorted(str(p) for p in (workdir / "syn").glob("*_image.png"))
    masks = sorted(str(p) for p in (workdir / "syn").glob("*_mask.png"))
    assert main(["features", "--images", *imgs, "--masks", *masks, "-o", str(d / "lbp.csv")]) == 0
    assert (d / "lbp.csv").read_bytes() == (workdir / "lbp.csv").read_bytes()
    assert main(["train", str(d / "lbp.csv"), "-o", str(d / "model.bin"), "--set", "n_trees=15"]) == 0
    assert (d / "model.bin").read_bytes() == (workdir / "model.bin").read_bytes()


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("classifier = cart\nclassifier_seed = 3\n")
    assert main(["train", str(workdir / "lbp.csv"), "-o", str(tmp_path / "m1"), "--config", str(cfg)]) == 0
    assert classify.load_model(tmp_path / "m1").spec.kind == "cart"
    assert main(["train", str(workdir / "lbp.csv"), "-o", str(tmp_path / "m2"), "--config", str(cfg),
                 "--classifier", "naive_bayes"]) == 0
    assert classify.load_model(tmp_path / "m2").spec.kind == "naive_bayes"


def test_usage_errors_exit_1(workdir, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1
    assert main(["train", str(workdir / "lbp.csv"), "-o", str(tmp_path / "m"), "--set", "bogus=1"]) == 1
    assert main(["features", "--images", "a.png", "-o", str(tmp_path / "f.csv")]) == 1
    capsys.readouterr()


def test_data_errors_exit_2(workdir, tmp_path):
    assert main(["train", str(tmp_path / "missing.csv"), "-o", str(tmp_path / "m")]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert main(["predict", str(bad), str(workdir / "lbp.csv"), "-o", str(tmp_path / "p.csv")]) == 2
    txt = tmp_path / "img.png"
    txt.write_text("not an image")
    assert main(["segment", str(txt), "-o", str(tmp_path / "m.png")]) == 2


def test_help_documents_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--set", "--folds", "--cv-seed", "--group-by-image", "--spec"):
        assert flag in out
