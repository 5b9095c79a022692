import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retina_pipeline import cascade as cs
from retina_pipeline.dataset import ImageRecord
from retina_pipeline.errors import ConfigError, MissingScore, ScoreOutOfRange

TREE = cs.build_default_tree()
IDS = ["dr", "severity", "mild_vs_moderate", "severe_vs_proliferate"]

unit = st.floats(0, 1)


def test_default_tree_structure():
    assert [n.id for n in TREE.nodes()] == IDS
    root = TREE.root
    assert root.left_classes == {0} and root.right_classes == {1, 2, 3, 4}
    assert TREE.paths()[3] == [("dr", 1), ("severity", 1), ("severe_vs_proliferate", 0)]


def test_hand_multiplied_vector():
    s = {"dr": 0.9, "severity": 0.8, "mild_vs_moderate": 0.5, "severe_vs_proliferate": 0.25}
    np.testing.assert_allclose(cs.path_probabilities(TREE, s), [0.1, 0.09, 0.09, 0.54, 0.18], atol=1e-12)
    assert cs.cascade_predict(TREE, s) == 3


def test_low_root_score_means_no_dr():
    grid = np.round(np.arange(0, 1.0001, 0.05), 2)
    for a, b, c in itertools.product(grid, repeat=3):
        for root in (0.0, 0.05, 0.1):
            s = {"dr": root, "severity": a, "mild_vs_moderate": b, "severe_vs_proliferate": c}
            assert cs.cascade_predict(TREE, s) == 0


@settings(max_examples=200)
@given(unit, unit, unit, unit)
def test_path_probabilities_form_a_distribution(a, b, c, d):
    p = cs.path_probabilities(TREE, dict(zip(IDS, (a, b, c, d))))
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9


def test_vectorised_scores():
    rng = np.random.default_rng(0)
    s = {i: rng.random(50) for i in IDS}
    p = cs.path_probabilities(TREE, s)
    assert p.shape == (50, 5)
    for j in range(50):
        np.testing.assert_allclose(p[j], cs.path_probabilities(TREE, {k: v[j] for k, v in s.items()}))


def test_missing_and_invalid_scores():
    with pytest.raises(MissingScore) as exc:
        cs.path_probabilities(TREE, {"dr": 0.5})
    assert exc.value.node_id == "severity"
    with pytest.raises(ScoreOutOfRange):
        cs.path_probabilities(TREE, {i: 1.5 for i in IDS})


def test_tree_validation():
    with pytest.raises(ConfigError):
        cs.CascadeTree(cs.CascadeNode("a", 0, cs.CascadeNode("b", 1, 2)))
    with pytest.raises(ConfigError):
        cs.CascadeTree(cs.CascadeNode("a", cs.CascadeNode("a", 0, 1), cs.CascadeNode("b", 2, cs.CascadeNode("c", 3, 4))))


def test_custom_tree_chain():
    chain = cs.CascadeTree(cs.CascadeNode("n0", 0, cs.CascadeNode("n1", 1, cs.CascadeNode("n2", 2, cs.CascadeNode("n3", 3, 4)))))
    p = cs.path_probabilities(chain, {f"n{i}": 0.5 for i in range(4)})
    np.testing.assert_allclose(p, [0.5, 0.25, 0.125, 0.0625, 0.0625])


def test_node_training_records():
    recs = [ImageRecord(str(g), None, g) for g in range(5)]
    sev = TREE.nodes()[1]
    sub = cs.node_training_records(recs, sev)
    assert [(r.grade, r.task_label) for r in sub] == [(1, 0), (2, 0), (3, 1), (4, 1)]


def test_json_round_trip_resolves_relative_paths(tmp_path):
    doc = {
        "format": "retina-pipeline-cascade",
        "version": 1,
        "root": {
            "id": "dr", "left": [0], "checkpoint": "m/dr.npz",
            "right": {
                "id": "severity", "checkpoint": "/abs/sev.npz",
                "left": {"id": "mild_vs_moderate", "left": 1, "right": 2, "checkpoint": "a.csv"},
                "right": {"id": "severe_vs_proliferate", "left": 3, "right": 4, "checkpoint": "b.csv"},
            },
        },
    }
    path = tmp_path / "cascade.json"
    path.write_text(json.dumps(doc))
    tree = cs.load_cascade(path)
    refs = {n.id: n.model_ref for n in tree.nodes()}
    assert refs["dr"] == str(tmp_path / "m/dr.npz") and refs["severity"] == "/abs/sev.npz"
    assert cs.tree_from_dict(cs.tree_to_dict(tree)) == tree


def test_load_cascade_errors(tmp_path):
    with pytest.raises(ConfigError):
        cs.load_cascade(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        cs.load_cascade(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        cs.tree_from_dict({"root": 3})
