import csv
import shutil
import subprocess

import numpy as np
import pytest

from genlab import clstrain
from genlab import manifests as mf


def smoke_config(**overrides):
    defaults = dict(resolution=64, max_epochs=2, head_only_epochs=1,
                    batch_size=4, pretrained=False, device="cpu", workers=0,
                    seed=42)
    defaults.update(overrides)
    return clstrain.ClsTrainConfig(**defaults)


def test_model_head_shape():
    import torch
    model = clstrain.build_model(pretrained=False, dropout=0.3)
    out = model(torch.randn(2, 3, 64, 64))
    assert out.shape == (2, 2)


def test_backbone_freezing():
    model = clstrain.build_model(pretrained=False, dropout=0.3)
    clstrain._set_backbone_frozen(model, True)
    frozen = [p.requires_grad for n, p in model.named_parameters()
              if not n.startswith("classifier")]
    head = [p.requires_grad for n, p in model.named_parameters()
            if n.startswith("classifier")]
    assert not any(frozen) and all(head)
    clstrain._set_backbone_frozen(model, False)
    assert all(p.requires_grad for p in model.parameters())


def test_train_classifier_smoke(tiny_corpus, tmp_path):
    out = tmp_path / "clsrun"
    summary = clstrain.train_classifier(tiny_corpus["manifest"], out,
                                        smoke_config())
    assert summary["best_epoch"] >= 1
    assert (out / "best.pt").exists()

    with open(out / "predictions.csv") as fh:
        rows = list(csv.DictReader(fh))
    eval_rows = mf.split_rows(mf.read_manifest(tiny_corpus["manifest"]), "val")
    assert len(rows) == len(eval_rows)
    assert set(csv.DictReader(open(out / "predictions.csv")).fieldnames) \
        == {"image_id", "score", "label"}
    for row in rows:
        assert 0.0 <= float(row["score"]) <= 1.0
        assert row["label"] in ("0", "1")

    log = (out / "epoch_log.csv").read_text().splitlines()
    assert log[0] == ",".join(mf.LOG_COLUMNS)
    assert 2 <= len(log) - 1 <= 2  # two epochs, no early stop that fast
    for line in log[1:]:
        assert all(np.isfinite(float(c)) for c in line.split(",")[1:])


def test_train_classifier_requires_split(tmp_path, tiny_corpus):
    manifest = tmp_path / "nosplit.csv"
    text = tiny_corpus["manifest"].read_text().replace(",train", ",")
    manifest.write_text(text)
    with pytest.raises(ValueError):
        clstrain.train_classifier(manifest, tmp_path / "out", smoke_config())


@pytest.mark.skipif(shutil.which("dermaudit") is None,
                    reason="dermaudit CLI not on PATH")
def test_outputs_roundtrip_through_toolkit(tiny_corpus, tmp_path):
    out = tmp_path / "clsrun"
    clstrain.train_classifier(tiny_corpus["manifest"], out, smoke_config())
    subprocess.run(["dermaudit", "eval-cls",
                    "--predictions", str(out / "predictions.csv"),
                    "--out-prefix", str(tmp_path / "eval")],
                   check=True, capture_output=True)
    subprocess.run(["dermaudit", "report",
                    "--log", str(out / "epoch_log.csv"),
                    "--out-dir", str(tmp_path / "report")],
                   check=True, capture_output=True)
    assert (tmp_path / "eval_summary.json").exists()
    assert (tmp_path / "report" / "summary.json").exists()
