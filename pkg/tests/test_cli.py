import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from dermaudit import dataset as ds
from dermaudit.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def read_data_lines(path):
    return [l for l in Path(path).read_text().splitlines()
            if l and not l.startswith("#")]


def test_help_per_subcommand(runner):
    for cmd in ("ingest", "audit", "preprocess", "validate-synth", "integrate",
                "split", "segment", "eval-seg", "eval-cls", "report"):
        result = runner.invoke(main, [cmd, "--help"])
        assert result.exit_code == 0


def test_usage_error_exit_code_2(runner):
    result = runner.invoke(main, ["audit"])  # missing required options
    assert result.exit_code == 2


def test_data_error_exit_code_1(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,manifest\n1,2,3\n")
    result = runner.invoke(main, ["audit", "--manifest", str(bad),
                                  "--out-dir", str(tmp_path / "out")])
    assert result.exit_code == 1
    payload = json.loads(result.output.strip().splitlines()[-1])
    assert payload["error"] == "manifest"


def test_audit_three_image_fixture(runner, corpus, tmp_path):
    # tiny manifest: per-image CSV must contain one classified row per image
    manifest = tmp_path / "three.csv"
    records = []
    for i in range(3):
        image_id = f"FIX{i:07d}"
        records.append(ds.ImageRecord(image_id,
                                      str(corpus["images"] / f"{image_id}.png"),
                                      "melanoma", ds.MELANOCYTIC, f"p{i}"))
    ds.Manifest(records).write_csv(manifest)
    out_dir = tmp_path / "audit"
    invoke(runner, ["audit", "--manifest", str(manifest),
                    "--out-dir", str(out_dir)])
    rows = read_data_lines(out_dir / "ita_per_image.csv")
    assert len(rows) == 1 + 3
    assert (out_dir / "tone_audit.csv").exists()
    assert (out_dir / "tone_audit.json").exists()


def test_eval_cls_matches_library_call(runner, corpus, tmp_path):
    from dermaudit.cli import read_predictions_csv
    from dermaudit.metrics import cls_scores

    out_prefix = tmp_path / "cls"
    invoke(runner, ["eval-cls", "--predictions", str(corpus["predictions"]),
                    "--out-prefix", str(out_prefix)])
    payload = json.loads((tmp_path / "cls_summary.json").read_text())
    rows = read_predictions_csv(corpus["predictions"])
    direct = cls_scores([(s, y) for _, s, y in rows])
    assert payload["metrics"]["accuracy"] == direct.accuracy
    assert payload["metrics"]["auc"] == direct.auc
    assert payload["metrics"]["f1"] == direct.f1


def test_report_command(runner, corpus, tmp_path):
    out_dir = tmp_path / "report"
    result = invoke(runner, ["report", "--log", str(corpus["trainlog"]),
                             "--out-dir", str(out_dir)])
    payload = json.loads(result.output.strip().splitlines()[-1])
    assert payload["best_auc_epoch"] == 25  # AUC rises 0.856 -> 0.948
    for panel in ("loss", "accuracy", "auc"):
        assert (out_dir / f"{panel}.svg").exists()
    assert (out_dir / "series.csv").exists()


def test_report_rejects_shuffled_log(runner, tmp_path):
    log = tmp_path / "bad.csv"
    log.write_text("epoch,loss_train,loss_val,acc_train,acc_val,auc_val\n"
                   "2,0.3,0.4,85,83,0.9\n1,0.4,0.5,80,78,0.85\n")
    result = runner.invoke(main, ["report", "--log", str(log),
                                  "--out-dir", str(tmp_path / "out")])
    assert result.exit_code == 1
    payload = json.loads(result.output.strip().splitlines()[-1])
    assert payload["error"] == "MalformedLog"


def test_split_seed_determinism_byte_exact(runner, corpus, tmp_path):
    manifest = tmp_path / "m.csv"
    records = []
    for i in range(12):
        image_id = f"FIX{i:07d}"
        records.append(ds.ImageRecord(image_id,
                                      str(corpus["images"] / f"{image_id}.png"),
                                      "melanoma", ds.MELANOCYTIC,
                                      f"pat{i // 3}"))
    ds.Manifest(records).write_csv(manifest)
    out1 = tmp_path / "s1.csv"
    out2 = tmp_path / "s2.csv"
    invoke(runner, ["split", "--manifest", str(manifest), "--out", str(out1),
                    "--seed", "11"])
    invoke(runner, ["split", "--manifest", str(manifest), "--out", str(out2),
                    "--seed", "11"])
    assert out1.read_bytes() == out2.read_bytes()


def test_preprocess_writes_pngs_and_exclusion_log(runner, corpus, tmp_path):
    manifest = tmp_path / "m.csv"
    records = [ds.ImageRecord("FIX0000000",
                              str(corpus["images"] / "FIX0000000.png"),
                              "melanoma", ds.MELANOCYTIC, "p0"),
               ds.ImageRecord("GONE", str(tmp_path / "gone.png"),
                              "melanoma", ds.MELANOCYTIC, "p1")]
    ds.Manifest(records).write_csv(manifest)
    cfg = tmp_path / "pp.cfg"
    cfg.write_text("target_size=64\nnlm_search=11\n")
    out_dir = tmp_path / "prep"
    result = invoke(runner, ["preprocess", "--manifest", str(manifest),
                             "--out", str(out_dir), "--config", str(cfg)])
    payload = json.loads(result.output.strip().splitlines()[-1])
    assert payload == {"processed": 1, "excluded": 1}
    from PIL import Image
    with Image.open(out_dir / "FIX0000000.png") as im:
        assert im.size == (64, 64)
    rows = read_data_lines(out_dir / "exclusions.csv")
    assert rows[1].startswith("GONE,")


def test_full_pipeline_smoke(runner, corpus, tmp_path):
    """Chained run: ingest -> audit -> validate-synth -> integrate -> split
    -> segment -> eval-seg, all artifacts schema-valid."""
    work = tmp_path

    manifest = work / "manifest.csv"
    result = invoke(runner, ["ingest",
                             "--metadata", str(corpus["metadata"]),
                             "--image-root", str(corpus["images"]),
                             "--out", str(manifest),
                             "--extension", ".png"])
    assert json.loads(result.output)["records"] == 48

    audit_dir = work / "audit"
    invoke(runner, ["audit", "--manifest", str(manifest),
                    "--out-dir", str(audit_dir)])
    audited = audit_dir / "manifest_audited.csv"
    assert audited.exists()
    tone = json.loads((audit_dir / "tone_audit.json").read_text())
    assert tone["total"] == 48

    validation = work / "synth_report.csv"
    result = invoke(runner, ["validate-synth",
                             "--real-manifest", str(audited),
                             "--synth-dir", str(corpus["synth"]),
                             "--out", str(validation)])
    payload = json.loads(result.output)
    assert payload["candidates"] == 16
    assert payload["accepted"] + payload["rejected"] == 16
    assert payload["rejected"] >= 2  # the two white outliers must fail

    merged = work / "merged.csv"
    result = invoke(runner, ["integrate",
                             "--real-manifest", str(audited),
                             "--synth-dir", str(corpus["synth"]),
                             "--validation", str(validation),
                             "--out", str(merged)])
    counts = json.loads(result.output)
    assert counts["real"] == 48
    assert counts["total"] == 48 + counts["synthetic_accepted"]

    split_manifest = work / "split.csv"
    result = invoke(runner, ["split", "--manifest", str(merged),
                             "--out", str(split_manifest), "--seed", "5",
                             "--synthetic-train-only"])
    split_counts = json.loads(result.output)
    assert sum(split_counts.values()) == counts["total"]
    loaded = ds.Manifest.read_csv(split_manifest)
    for rec in loaded:
        assert rec.split in ds.SPLITS
        if rec.source == ds.SOURCE_SYNTHETIC:
            assert rec.split == "train"

    masks_dir = work / "masks"
    result = invoke(runner, ["segment", "--manifest", str(split_manifest),
                             "--out", str(masks_dir)])
    seg_counts = json.loads(result.output)
    assert seg_counts["segmented"] + seg_counts["failed"] == counts["total"]
    assert seg_counts["failed"] == 0

    eval_prefix = work / "seg_eval"
    result = invoke(runner, ["eval-seg", "--pred-dir", str(masks_dir),
                             "--truth-dir", str(corpus["truth"]),
                             "--out-prefix", str(eval_prefix)])
    summary = json.loads((work / "seg_eval_summary.json").read_text())
    assert summary["images"] == 48
    assert 0.0 <= summary["means"]["iou"] <= 1.0
    per_image = read_data_lines(work / "seg_eval_per_image.csv")
    assert len(per_image) == 1 + 48

    # masks are {0,255} single-channel PNGs
    from PIL import Image
    sample = masks_dir / "FIX0000000.png"
    with Image.open(sample) as im:
        assert im.mode == "L"
        values = set(np.array(im).ravel().tolist())
        assert values <= {0, 255}


def test_validate_synth_seeded_byte_identity(runner, corpus, tmp_path):
    manifest = tmp_path / "dark.csv"
    records = []
    for i in range(4, 48, 6):  # the darkest palette entries
        image_id = f"FIX{i:07d}"
        records.append(ds.ImageRecord(image_id,
                                      str(corpus["images"] / f"{image_id}.png"),
                                      "melanoma", ds.MELANOCYTIC, f"p{i}",
                                      fitzpatrick="V"))
    ds.Manifest(records).write_csv(manifest)
    out1 = tmp_path / "r1.csv"
    out2 = tmp_path / "r2.csv"
    for out in (out1, out2):
        invoke(runner, ["validate-synth", "--real-manifest", str(manifest),
                        "--synth-dir", str(corpus["synth"]),
                        "--out", str(out), "--seed", "3"])
    assert out1.read_bytes() == out2.read_bytes()


def test_segment_byte_identity_across_worker_counts(runner, corpus, tmp_path):
    manifest = tmp_path / "m.csv"
    records = []
    for i in range(6):
        image_id = f"FIX{i:07d}"
        records.append(ds.ImageRecord(image_id,
                                      str(corpus["images"] / f"{image_id}.png"),
                                      "melanoma", ds.MELANOCYTIC, f"p{i}"))
    ds.Manifest(records).write_csv(manifest)
    d1 = tmp_path / "masks1"
    d2 = tmp_path / "masks2"
    invoke(runner, ["segment", "--manifest", str(manifest), "--out", str(d1),
                    "--threads", "1"])
    invoke(runner, ["segment", "--manifest", str(manifest), "--out", str(d2),
                    "--threads", "4"])
    for i in range(6):
        name = f"FIX{i:07d}.png"
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_path_env_var_override(runner, corpus, tmp_path, monkeypatch):
    # path options accept DERMAUDIT_<COMMAND>_<OPTION> env overrides
    out_dir = tmp_path / "report_env"
    monkeypatch.setenv("DERMAUDIT_REPORT_LOG_PATH", str(corpus["trainlog"]))
    result = runner.invoke(main, ["report", "--out-dir", str(out_dir)],
                           catch_exceptions=False)
    assert result.exit_code == 0, result.output
    assert (out_dir / "summary.json").exists()


def test_no_subcommand_mutates_inputs(runner, corpus, tmp_path):
    manifest = tmp_path / "m.csv"
    records = [ds.ImageRecord("FIX0000001",
                              str(corpus["images"] / "FIX0000001.png"),
                              "melanoma", ds.MELANOCYTIC, "p0")]
    ds.Manifest(records).write_csv(manifest)
    before_manifest = manifest.read_bytes()
    before_image = (corpus["images"] / "FIX0000001.png").read_bytes()
    invoke(runner, ["segment", "--manifest", str(manifest),
                    "--out", str(tmp_path / "masks")])
    assert manifest.read_bytes() == before_manifest
    assert (corpus["images"] / "FIX0000001.png").read_bytes() == before_image
