import json

import pytest
from click.testing import CliRunner

from genlab.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def test_help_per_subcommand(runner):
    for cmd in ("finetune-lora", "generate", "train-seg", "train-cls",
                "inspect-manifest"):
        assert runner.invoke(main, [cmd, "--help"]).exit_code == 0


def test_inspect_manifest(runner, tiny_corpus):
    result = runner.invoke(main, ["inspect-manifest", "--manifest",
                                  str(tiny_corpus["manifest"])],
                           catch_exceptions=False)
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert payload["records"] == 16
    assert payload["by_split"] == {"train": 10, "val": 3, "test": 3}


def test_generate_cli_tiny_backend(runner, tmp_path):
    out = tmp_path / "gen"
    result = runner.invoke(main, ["generate", "--superclass", "melanocytic",
                                  "--count", "3", "--out", str(out),
                                  "--backend", "tiny", "--seed", "5"],
                           catch_exceptions=False)
    assert result.exit_code == 0
    assert json.loads(result.output)["generated"] == 3
    assert len(list(out.glob("GEN*.png"))) == 3
    assert (out / "metadata.csv").exists()


def test_finetune_cli_tiny_backend(runner, tiny_corpus, tmp_path):
    out = tmp_path / "adapter.pt"
    result = runner.invoke(main, ["finetune-lora",
                                  "--manifest", str(tiny_corpus["manifest"]),
                                  "--out", str(out), "--backend", "tiny",
                                  "--resolution", "64", "--batch-size", "8",
                                  "--max-steps", "1"],
                           catch_exceptions=False)
    assert result.exit_code == 0
    assert out.exists()


def test_train_seg_cli(runner, tiny_corpus, tmp_path):
    out = tmp_path / "segrun"
    result = runner.invoke(main, ["train-seg",
                                  "--manifest", str(tiny_corpus["manifest"]),
                                  "--masks", str(tiny_corpus["masks"]),
                                  "--out", str(out), "--epochs", "1",
                                  "--batch-size", "8", "--resolution", "64",
                                  "--device", "cpu"],
                           catch_exceptions=False)
    assert result.exit_code == 0
    assert json.loads(result.output)["test_predictions"] == 3
