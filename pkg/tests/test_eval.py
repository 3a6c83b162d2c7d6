import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irregad.eval import EvalError, auc_pairwise, emit_report, read_curve_table, roc_curve


def test_auc_examples():
    assert roc_curve([1, 2], [-1, 1]).auc == 1.0
    assert roc_curve([3.0] * 6, [-1, 1, 1, -1, -1, 1]).auc == 0.5
    assert roc_curve([0.1, 0.4, 0.3], [-1, -1, 1]).auc == pytest.approx(0.5, abs=1e-15)
    assert auc_pairwise([1, 2], [-1, 1]) == 1.0
    assert auc_pairwise([2, 1], [-1, 1]) == 0.0


def test_curve_shape():
    c = roc_curve([0.9, 0.8, 0.8, 0.1], [1, -1, 1, -1])
    assert np.isinf(c.thresholds[0])
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0) and (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert np.all(np.diff(c.thresholds) < 0)
    # the 0.8 tie moves both counts at once
    assert c.points()[2] == (0.8, 0.5, 1.0)


def test_errors():
    with pytest.raises(EvalError):
        roc_curve([1, 2], [1, 1])
    with pytest.raises(EvalError):
        roc_curve([1, 2], [1, -1, 1])
    with pytest.raises(EvalError):
        roc_curve([1, 2], [0, 1])
    with pytest.raises(EvalError):
        auc_pairwise([np.nan, 1], [1, -1])


def _instance(rng):
    n = int(rng.integers(2, 51))
    labels = rng.choice([-1, 1], size=n)
    labels[:2] = [-1, 1]
    scores = rng.integers(0, 6, size=n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
    return scores, labels


def test_roc_auc_matches_pairwise_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s, y = _instance(rng)
        assert abs(roc_curve(s, y).auc - auc_pairwise(s, y)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_monotone_transform_and_negation(seed):
    s, y = _instance(np.random.default_rng(seed))
    auc = roc_curve(s, y).auc
    assert roc_curve(np.exp(s / 3.0) * 2 + 1, y).auc == pytest.approx(auc, abs=1e-12)
    assert roc_curve(-s, y).auc == pytest.approx(1 - auc, abs=1e-12)


def test_report_files_and_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    s, y = rng.normal(size=40), np.r_[[-1] * 30, [1] * 10]
    curve = roc_curve(s, y)
    files = emit_report({"M-LSTM": curve}, tmp_path / "out", title="demo", header={"note": 1})
    assert sorted(files) == ["M-LSTM", "plot", "summary"]
    svg = files["plot"].read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert "M-LSTM" in svg and f"{curve.auc:.3f}" in svg
    back = read_curve_table(files["M-LSTM"])
    assert abs(back.auc - curve.auc) < 1e-9
    summary = json.loads(files["summary"].read_text())
    assert summary["note"] == 1 and summary["auc"]["M-LSTM"] == curve.auc


def test_report_grid_of_drop_rates(tmp_path):
    rng = np.random.default_rng(2)
    y = np.r_[[-1] * 20, [1] * 5]
    plots = set()
    for rate in (0.1, 0.3, 0.5, 0.7):
        curves = {m: roc_curve(rng.normal(size=25), y) for m in ("A-LSTM", "D-LSTM", "M-LSTM")}
        plots.add(emit_report(curves, tmp_path, stem=f"roc_drop{rate:g}")["plot"])
    assert len(plots) == 4 and all(p.exists() for p in plots)
    assert len(list(tmp_path.glob("*.csv"))) == 12


def test_report_errors(tmp_path):
    with pytest.raises(EvalError):
        emit_report({}, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(EvalError):
        emit_report({"m": roc_curve([1, 2], [-1, 1])}, blocker / "sub")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n")
    with pytest.raises(EvalError):
        read_curve_table(bad)
