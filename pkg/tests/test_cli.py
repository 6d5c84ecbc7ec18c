"""Command-line interface: the full artifact pipeline, exit codes, overrides."""

import json

import numpy as np
import pytest

from guidefit.checkpoints import save_weight_fn
from guidefit.cli import main
from guidefit.guidance import ConstantWeight

TINY = {
    "seed": 3,
    "denoiser": {"kind": "analytic"},
    "guidance": {"embed_hidden": 16, "embed_dim": 16, "trunk_hidden": 8,
                 "trunk_layers": 2},
    "train": {"mode": "self_consistency", "iterations": 6, "batch_size": 16,
              "particles": 4, "checkpoint_every": 3, "probe_size": 32},
    "sample": {"steps": 5, "count": 48},
    "eval": {"omega_grid": [0.0, 1.0], "resamples": 4},
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(*argv):
    return main(list(argv))


def test_full_pipeline(tmp_path, tiny_config):
    out = str(tmp_path / "run")
    assert run("pretrain-denoiser", "--config", tiny_config, "--out", out, "--quiet") == 0
    assert (tmp_path / "run" / "denoiser.json").exists()

    assert run("train-guidance", "--config", tiny_config, "--out", out, "--quiet") == 0
    assert (tmp_path / "run" / "guidance.json").exists()
    assert (tmp_path / "run" / "train_record.csv").exists()

    assert run("sample", "--config", tiny_config, "--out", out, "--quiet",
               "--trajectory", "0") == 0
    samples = (tmp_path / "run" / "samples.csv").read_text().splitlines()
    assert samples[1] == "c,x,y"
    assert len(samples) == 2 + TINY["sample"]["count"]
    assert (tmp_path / "run" / "trajectory.csv").exists()

    data_csv = str(tmp_path / "run" / "data.csv")
    assert run("sample", "--config", tiny_config, "--out", out, "--quiet",
               "--from-data", "--output", data_csv) == 0

    assert run("eval-mmd", "--config", tiny_config, "--out", out, "--quiet",
               "--generated", str(tmp_path / "run" / "samples.csv"),
               "--reference", data_csv) == 0
    eval_out = json.loads((tmp_path / "run" / "eval.json").read_text())
    assert np.isfinite(eval_out["rows"][0]["mmd"])

    assert run("sweep", "--config", tiny_config, "--out", out, "--quiet",
               "--guidance", str(tmp_path / "run" / "guidance.json")) == 0
    sweep = json.loads((tmp_path / "run" / "sweep.json").read_text())
    assert [r["label"] for r in sweep["rows"]] == ["omega=0", "omega=1", "learned"]

    assert run("export-weights", "--config", tiny_config, "--out", out, "--quiet") == 0
    weights = (tmp_path / "run" / "weights.csv").read_text().splitlines()
    assert weights[1] == "class,t,omega"
    assert len(weights) == 2 + 4 * 98


def test_seed_override_changes_output(tmp_path, tiny_config):
    a, b, c = (str(tmp_path / d) for d in ("a", "b", "c"))
    for out, seed in ((a, "7"), (b, "7"), (c, "8")):
        assert run("sample", "--config", tiny_config, "--out", out, "--quiet",
                   "--seed", seed) == 0
    read = lambda d: (tmp_path / d / "samples.csv").read_bytes()
    assert read("a") == read("b")
    assert read("a") != read("c")


def test_missing_config_is_usage_error(tmp_path):
    assert run("sample", "--config", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "o"), "--quiet") == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 0, "banana": 1}))
    assert run("sample", "--config", str(bad), "--out", str(tmp_path / "o"),
               "--quiet") == 2


def test_invalid_json_is_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("sample", "--config", str(bad), "--out", str(tmp_path / "o"),
               "--quiet") == 2


def test_missing_named_checkpoint_is_usage_error(tmp_path, tiny_config):
    assert run("sample", "--config", tiny_config, "--out", str(tmp_path / "o"),
               "--quiet", "--denoiser", str(tmp_path / "nope.json")) == 2


def test_non_finite_weights_are_numerical_failure(tmp_path, tiny_config):
    path = tmp_path / "inf.json"
    save_weight_fn(path, ConstantWeight(float("inf")))
    with np.errstate(invalid="ignore"):
        code = run("sample", "--config", tiny_config, "--out", str(tmp_path / "o"),
                   "--quiet", "--guidance", str(path))
    assert code == 3
