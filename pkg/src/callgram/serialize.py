"""Versioned JSON persistence for the tree learners."""

import json
from pathlib import Path

import numpy as np

from callgram.tree import Tree, kind_of, make_classifier

FORMAT = "callgram-model"
VERSION = 1


def model_to_dict(model, vocab_id=None, feature_indices=None, **meta) -> dict:
    """JSON-ready description of a fitted learner.

    ``feature_indices`` records the vocabulary columns the model was trained
    on when it is a reduced-feature model.
    """
    kind = kind_of(model)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        # worker count never changes a fitted model, so it is not persisted
        "params": {k: v for k, v in model.get_params().items() if k != "n_jobs"},
        "n_features": int(model.n_features_in_),
        "vocab_id": vocab_id,
        "feature_indices": None if feature_indices is None else [int(i) for i in feature_indices],
        "meta": meta,
    }
    if kind == "DT":
        doc["tree"] = model.tree_.to_dict()
    elif kind == "RF":
        doc["max_features_resolved"] = model.max_features_
        doc["trees"] = [t.to_dict() for t in model.trees_]
    else:
        doc["majority"] = model.majority_
        doc["alphas"] = [float(a) for a in model.alphas_]
        doc["stumps"] = [s.to_dict() for s in model.stumps_]
    return doc


def model_from_dict(doc: dict):
    """Rebuild ``(model, info)`` from :func:`model_to_dict` output."""
    if doc.get("format") != FORMAT:
        raise ValueError("not a callgram model document")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    model = make_classifier(doc["kind"], **doc["params"])
    n = doc["n_features"]
    model.n_features_in_ = n
    model.classes_ = np.array([0, 1])
    if doc["kind"] == "DT":
        model.tree_ = Tree.from_dict(doc["tree"], n)
    elif doc["kind"] == "RF":
        model.max_features_ = doc["max_features_resolved"]
        model.trees_ = [Tree.from_dict(t, n) for t in doc["trees"]]
    else:
        model.majority_ = doc["majority"]
        model.alphas_ = np.asarray(doc["alphas"], dtype=np.float64)
        model.stumps_ = [Tree.from_dict(s, n) for s in doc["stumps"]]
    info = {"vocab_id": doc.get("vocab_id"), "feature_indices": doc.get("feature_indices"),
            "meta": doc.get("meta", {})}
    return model, info


def save_model(path, model, **kwargs) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, **kwargs), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
