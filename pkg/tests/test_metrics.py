import csv
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import macro_prf, pairwise_auc
from retina_pipeline import metrics as mt
from retina_pipeline.dataset import TaskKind
from retina_pipeline.errors import (
    DegenerateLabels,
    EmptyMatrix,
    EmptyVector,
    LabelOutOfRange,
    LengthMismatch,
    ScoreOutOfRange,
)


def test_binary_decision_threshold():
    assert mt.binary_decision(0.5) == 0
    assert mt.binary_decision(0.51) == 1
    assert mt.binary_decision(0.0) == 0 and mt.binary_decision(1.0) == 1
    with pytest.raises(ScoreOutOfRange):
        mt.binary_decision(1.2)


def test_argmax_ties_go_low():
    assert mt.argmax_decision([0.5, 0.5]) == 0
    assert mt.argmax_decision([0.2, 0.4, 0.4]) == 1
    with pytest.raises(EmptyVector):
        mt.argmax_decision([])


def test_argmax_exhaustive_grid():
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    for vec in itertools.product(grid, repeat=3):
        assert mt.argmax_decision(vec) == min(i for i, v in enumerate(vec) if v == max(vec))


def test_predict_labels_vectorised_matches_scalar_rules():
    s = np.array([0.1, 0.5, 0.500001, 1.0])
    assert mt.predict_labels(s).tolist() == [mt.binary_decision(v) for v in s]
    p = np.array([[0.2, 0.4, 0.4], [0.5, 0.5, 0.0]])
    assert mt.predict_labels(p).tolist() == [1, 0]


def test_confusion_matrix_and_accuracy():
    cm = mt.confusion_matrix([0, 0, 1, 2, 2], [0, 1, 1, 2, 0], 3)
    assert cm.cells.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 1]]
    assert cm.accuracy == 3 / 5
    with pytest.raises(LabelOutOfRange):
        mt.confusion_matrix([0, 3], [0, 1], 3)
    with pytest.raises(LengthMismatch):
        mt.confusion_matrix([0], [0, 1], 2)
    with pytest.raises(EmptyMatrix):
        mt.confusion_matrix([], [], 2).accuracy


def test_prf_fixture():
    prf = mt.precision_recall_f1(mt.ConfusionMatrix(np.array([[8, 2], [4, 6]])))
    assert prf.precision[0] == pytest.approx(8 / 12, abs=1e-4)
    assert prf.recall[0] == pytest.approx(0.8, abs=1e-4)
    assert prf.f1[0] == pytest.approx(0.7273, abs=1e-4)
    assert prf.precision[1] == pytest.approx(0.75) and prf.recall[1] == pytest.approx(0.6)
    assert prf.support.tolist() == [10, 10]


def test_prf_degenerate_class_is_flagged():
    prf = mt.precision_recall_f1(mt.ConfusionMatrix(np.array([[5, 0], [3, 0]])))
    assert prf.precision[1] == 0.0 and ("precision", 1) in prf.degenerate


@settings(max_examples=60)
@given(st.integers(2, 5).flatmap(lambda k: st.lists(st.lists(st.integers(0, 30), min_size=k, max_size=k),
                                                      min_size=k, max_size=k)))
def test_prf_macro_matches_oracle(rows):
    cells = np.array(rows)
    if cells.sum() == 0:
        cells[0, 0] = 1
    prf = mt.precision_recall_f1(mt.ConfusionMatrix(cells))
    p, r, f = macro_prf(cells.tolist())
    assert prf.macro["precision"] == pytest.approx(p, abs=1e-12)
    assert prf.macro["recall"] == pytest.approx(r, abs=1e-12)
    assert prf.macro["f1"] == pytest.approx(f, abs=1e-12)
    assert mt.ConfusionMatrix(cells).accuracy == np.trace(cells) / cells.sum()


def test_roc_small_example():
    curve = mt.roc_curve([0.8, 0.4, 0.6, 0.2], [True, True, False, False])
    assert mt.auc(curve) == 0.75
    assert curve.thresholds[0] == np.inf
    assert curve.points[0] == (0.0, 0.0) and curve.points[-1] == (1.0, 1.0)


def test_roc_degenerate():
    with pytest.raises(DegenerateLabels):
        mt.roc_curve([0.1, 0.2], [True, True])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 1.0]), st.booleans()), min_size=2, max_size=200))
def test_auc_equals_pairwise_statistic_with_ties(pairs):
    scores = [s for s, _ in pairs]
    pos = [p for _, p in pairs]
    if all(pos) or not any(pos):
        return
    assert abs(mt.auc(mt.roc_curve(scores, pos)) - pairwise_auc(scores, pos)) <= 1e-9


@given(st.integers(0, 2**31))
def test_roc_monotone_and_bounded(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    pos = rng.random(n) < 0.5
    pos[0], pos[1] = True, False
    c = mt.roc_curve(rng.random(n), pos)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert 0.0 <= mt.auc(c) <= 1.0


def test_perfect_and_reversed_scores():
    y = [0, 0, 1, 1]
    assert mt.auc(mt.roc_curve([0.1, 0.2, 0.8, 0.9], y)) == 1.0
    assert mt.auc(mt.roc_curve([0.9, 0.8, 0.2, 0.1], y)) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 5))
def test_multiclass_auc_matches_oracles(seed, k):
    rng = np.random.default_rng(seed)
    n = 60
    y = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    p = rng.dirichlet(np.ones(k), size=n)
    res = mt.multiclass_auc(p, y)
    onehot = np.eye(k, dtype=bool)[y]
    assert res.micro_auc == pytest.approx(pairwise_auc(p.ravel().tolist(), onehot.ravel().tolist()), abs=1e-9)
    per = [pairwise_auc(p[:, c].tolist(), onehot[:, c].tolist()) for c in range(k)]
    assert res.macro_auc == pytest.approx(np.mean(per), abs=1e-9)


def test_multiclass_auc_skips_absent_class():
    p = np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    res = mt.multiclass_auc(p, [0, 1, 0])
    assert res.skipped == (2,)
    assert set(res.per_class_auc) == {0, 1}


def test_multiclass_auc_rejects_non_distributions():
    with pytest.raises(ValueError):
        mt.multiclass_auc(np.array([[0.5, 0.6], [0.5, 0.5]]), [0, 1])


def test_evaluate_three_class_hand_case():
    y = [0, 0, 1, 1, 2, 2]
    probs = np.array([
        [0.8, 0.1, 0.1],
        [0.3, 0.6, 0.1],
        [0.1, 0.8, 0.1],
        [0.2, 0.7, 0.1],
        [0.1, 0.2, 0.7],
        [0.5, 0.1, 0.4],
    ])
    rep = mt.evaluate(probs, y, "THREE")
    assert rep.confusion.cells.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    assert rep.accuracy == pytest.approx(4 / 6)
    assert rep.prf.precision.tolist() == pytest.approx([0.5, 2 / 3, 1.0])
    assert rep.prf.recall.tolist() == pytest.approx([0.5, 1.0, 0.5])
    assert list(rep.table()) == list(mt.TABLE_METRICS)
    assert rep.table()["Precision"] == pytest.approx((0.5 + 2 / 3 + 1.0) / 3)


def test_constant_predictor_gives_one_third_macro_recall():
    y = np.array([0] * 60 + [1] * 25 + [2] * 15)
    probs = np.tile([0.6, 0.3, 0.1], (100, 1))
    table = mt.evaluate(probs, y, TaskKind.THREE).table()
    assert table["Recall"] == pytest.approx(1 / 3)
    assert table["Precision"] == pytest.approx(0.6 / 3)


def test_evaluate_perfect_binary():
    rep = mt.evaluate(np.array([0.1, 0.2, 0.9, 0.8]), [0, 0, 1, 1], "BINARY")
    assert all(v == 1.0 for v in rep.table().values())


def test_evaluate_shape_checks():
    with pytest.raises(LengthMismatch):
        mt.evaluate(np.zeros((3, 2)), [0, 1, 0], "BINARY")
    with pytest.raises(LengthMismatch):
        mt.evaluate(np.full((2, 3), 1 / 3), [0, 1, 2], "THREE")


def test_write_report_files(tmp_path):
    rep = mt.evaluate(np.eye(5)[[0, 1, 2, 3, 4, 0]] * 0.9 + 0.02, [0, 1, 2, 3, 4, 1], "FIVE")
    paths = mt.write_report(rep, tmp_path, "toy")
    assert [p.name for p in paths] == ["report.json", "metrics_table.csv", "confusion.csv", "roc.csv"]
    rows = list(csv.reader(paths[1].open()))
    assert rows[0] == ["Metric", "toy"] and [r[0] for r in rows[1:]] == list(mt.TABLE_METRICS)
    conf = list(csv.reader(paths[2].open()))
    assert len(conf) == 6 and all(len(r) == 6 for r in conf)
    doc = json.loads(paths[0].read_text())
    assert doc["task"] == "FIVE" and doc["confusion"] == rep.confusion.cells.tolist()
    assert set(doc["weighted"]) == {"precision", "recall", "f1"}
    curves = {r[0] for r in list(csv.reader(paths[3].open()))[1:]}
    assert {"micro", "macro", "class_0"} <= curves
    first = [p.read_bytes() for p in paths]
    mt.write_report(rep, tmp_path, "toy")
    assert [p.read_bytes() for p in paths] == first
