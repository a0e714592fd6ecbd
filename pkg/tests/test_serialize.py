import json

import numpy as np
import pytest

from callgram.serialize import load_model, model_from_dict, model_to_dict, save_model
from callgram.tree import AdaBoostClassifier, DecisionTreeClassifier, RandomForestClassifier


@pytest.mark.parametrize("cls", [DecisionTreeClassifier, RandomForestClassifier, AdaBoostClassifier])
def test_model_document_round_trip(cls):
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (80, 15))
    y = (X[:, 1] | X[:, 7]).astype(int)
    y[:5] ^= 1
    model = cls().fit(X, y)
    doc = json.loads(json.dumps(model_to_dict(model, vocab_id="abc", feature_indices=[1, 2])))
    back, info = model_from_dict(doc)
    assert info["vocab_id"] == "abc" and info["feature_indices"] == [1, 2]
    assert (back.predict(X) == model.predict(X)).all()
    assert np.array_equal(back.feature_importances_, model.feature_importances_)
    assert model_to_dict(back, vocab_id="abc", feature_indices=[1, 2]) == doc


def test_model_document_version_check():
    doc = model_to_dict(DecisionTreeClassifier().fit([[0], [1]], [0, 1]))
    with pytest.raises(ValueError):
        model_from_dict({**doc, "version": 99})
    with pytest.raises(ValueError):
        model_from_dict({**doc, "format": "other"})


def test_save_load_file(tmp_path):
    model = RandomForestClassifier(n_trees=5, n_jobs=3).fit(np.eye(6, dtype=int), [0, 1, 0, 1, 0, 1])
    save_model(tmp_path / "m.json", model, vocab_id="v", run="x")
    back, info = load_model(tmp_path / "m.json")
    assert info["meta"] == {"run": "x"}
    assert "n_jobs" not in json.loads((tmp_path / "m.json").read_text())["params"]
    assert (back.predict(np.eye(6, dtype=int)) == model.predict(np.eye(6, dtype=int))).all()
