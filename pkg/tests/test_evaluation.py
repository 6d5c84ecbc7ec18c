"""Evaluation estimator and report plumbing."""

import json

import numpy as np
import pytest

from guidefit.evaluation import (EvalReport, EvalRow, energy_mmd, evaluate_samples,
                                 mmd_with_se, run_figure_protocol)
from guidefit.guidance import ConstantWeight
from guidefit.rng import stream


def test_energy_mmd_two_point_hand_value():
    x = np.array([[0.0, 0.0]])
    y = np.array([[3.0, 4.0]])
    assert energy_mmd(x, y, beta=1.0, lam=0.0) == 5.0
    assert energy_mmd(x, y, beta=2.0, lam=0.0) == 25.0
    with pytest.raises(ValueError):
        energy_mmd(x, y, beta=2.5)
    with pytest.raises(ValueError):
        energy_mmd(x, y, lam=1.0)  # within-set term needs two points


def test_energy_mmd_detects_shift():
    rng = stream(0, "test/shift")
    x = rng.standard_normal((500, 2))
    y = rng.standard_normal((500, 2))
    base = energy_mmd(x, y)
    shifted = energy_mmd(x, y + 2.0)
    assert shifted > base + 0.5


def test_two_halves_of_one_draw_score_near_zero(mog):
    x, _ = mog.sample_joint(4096, stream(1, "test/halves"))
    mmd, se = mmd_with_se(x[:2048], x[2048:], seed=0)
    assert abs(mmd) < 4.0 * se


def test_mmd_with_se_is_deterministic(mog):
    x, _ = mog.sample_joint(512, stream(2, "test/det"))
    y, _ = mog.sample_joint(512, stream(3, "test/det"))
    a = mmd_with_se(x, y, seed=7)
    b = mmd_with_se(x, y, seed=7)
    assert a == b
    with pytest.raises(ValueError):
        mmd_with_se(x, y, n_resamples=1)
    with pytest.raises(ValueError):
        mmd_with_se(x, y, fraction=1.0)


def test_evaluate_samples_per_class(mog):
    rng = stream(4, "test/per_class")
    x, cx = mog.sample_joint(600, rng)
    ref, cref = mog.sample_joint(600, rng)
    row = evaluate_samples(x, cx, ref, cref, "check", omega=0.0, seed=0)
    assert row.label == "check"
    assert row.count == 600
    assert sorted(row.per_class) == [0, 1, 2, 3]
    assert all(np.isfinite(v) for v in row.per_class.values())


def test_report_lookup_and_serialization(tmp_path):
    rows = [EvalRow(label="omega=0", omega=0.0, mmd=0.1, se=0.01, count=64),
            EvalRow(label="learned", omega=None, mmd=0.05, se=0.01, count=64)]
    report = EvalReport(rows=rows, beta=1.0, lam=1.0, seed=3, config_digest="abc")
    assert report.row("learned").mmd == 0.05
    with pytest.raises(KeyError):
        report.row("missing")

    jpath = tmp_path / "report.json"
    report.write_json(jpath)
    loaded = json.loads(jpath.read_text())
    assert loaded["config_digest"] == "abc"
    assert loaded["rows"][1]["omega"] is None
    assert loaded["rows"][0]["mmd"] == 0.1

    cpath = tmp_path / "report.csv"
    report.write_csv(cpath, header_comment="seed=3")
    lines = cpath.read_text().splitlines()
    assert lines[0] == "# seed=3"
    assert lines[1] == "label,omega,mmd,se,count"
    assert lines[2].startswith("omega=0,0.0,")
    assert lines[3].startswith("learned,,")


def test_figure_protocol_rows_and_common_reference(exact, mog):
    from guidefit.sampler import SampleConfig

    config = SampleConfig(steps=3, count=64)
    report = run_figure_protocol(exact, exact, mog, config, (0.0, 0.5),
                                 learned_fn=ConstantWeight(0.0), n_resamples=4,
                                 seed=2)
    assert [r.label for r in report.rows] == ["omega=0", "omega=0.5", "learned"]
    # the learned function IS omega = 0 here, so the rows must agree exactly
    assert report.row("learned").mmd == report.row("omega=0").mmd
    assert report.row("omega=0.5").mmd != report.row("omega=0").mmd
