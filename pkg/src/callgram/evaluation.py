"""Splitting, weighted classification metrics and unseen-sample scoring."""

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Dict, List, Optional, Sequence

import numpy as np

from callgram.exceptions import VocabularyError
from callgram.featurize import NGramVocab, encode_dataset
from callgram.trace import Dataset, Label


def round_half_even(x: float, places: int = 4) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_EVEN))


@dataclass
class Split:
    train_ids: List[str]
    test_ids: List[str]
    ratio: float
    seed: int

    def to_dict(self):
        return {"ratio": self.ratio, "seed": self.seed, "train_ids": self.train_ids, "test_ids": self.test_ids}


def stratified_split(sample_ids: Sequence[str], labels: Sequence[int], ratio: float = 0.7, seed: int = 0) -> Split:
    """Seeded stratified train/test split.

    The training size is ``round(ratio * N)``. It is shared out across classes
    by largest remainder of ``ratio * n_class`` (remainder ties go to the lower
    label), so each class's train count is within one sample of its exact
    proportional share. Both id lists keep the input order.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    labels = np.asarray(labels)
    if len(sample_ids) != len(labels):
        raise ValueError("sample_ids and labels differ in length")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("stratified split needs both classes present")
    if counts.min() < 2:
        raise ValueError(f"class {classes[counts.argmin()]} has fewer than 2 members")

    n_train = int(round(ratio * len(labels)))
    exact = ratio * counts
    quota = np.floor(exact).astype(int)
    remainder = exact - quota
    for j in sorted(range(len(classes)), key=lambda j: (-remainder[j], classes[j]))[: n_train - quota.sum()]:
        quota[j] += 1

    rng = np.random.default_rng(seed)
    in_train = np.zeros(len(labels), dtype=bool)
    for cls, q in zip(classes, quota):
        members = np.flatnonzero(labels == cls)
        in_train[rng.permutation(members)[:q]] = True
    ids = list(sample_ids)
    return Split(
        [s for s, t in zip(ids, in_train) if t],
        [s for s, t in zip(ids, in_train) if not t],
        ratio,
        seed,
    )


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: List[List[int]]

    def to_dict(self, places: Optional[int] = 4) -> Dict:
        r = (lambda v: round_half_even(v, places)) if places is not None else float
        return {
            "accuracy": r(self.accuracy),
            "precision": r(self.precision),
            "recall": r(self.recall),
            "f1": r(self.f1),
            "confusion": self.confusion,
        }


def compute_metrics(y_true, y_pred) -> Metrics:
    """Accuracy and support-weighted precision, recall and F1 over both classes.

    A class with no predictions has precision 0; classes absent from
    ``y_true`` carry zero weight.
    """
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} true labels vs {len(y_pred)} predictions")
    if len(y_true) == 0:
        raise ValueError("cannot score empty label vectors")
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (y_true.astype(int), y_pred.astype(int)), 1)
    total = cm.sum()
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(predicted > 0, tp / predicted, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    weight = support / total
    return Metrics(
        accuracy=float(tp.sum() / total),
        precision=float(np.dot(weight, prec)),
        recall=float(np.dot(weight, rec)),
        f1=float(np.dot(weight, f1)),
        confusion=cm.tolist(),
    )


def metrics_table(rows: Dict[str, Metrics]) -> str:
    """Aligned text table, values in percent with three decimals."""
    name_w = max([len("Model")] + [len(k) for k in rows])
    head = f"{'Model':<{name_w}}  {'Accuracy':>9}  {'Precision':>9}  {'Recall':>9}  {'F1 Score':>9}"
    lines = [head, "-" * len(head)]
    for name, m in rows.items():
        vals = [m.accuracy, m.precision, m.recall, m.f1]
        lines.append(f"{name:<{name_w}}  " + "  ".join(f"{100 * v:>9.3f}" for v in vals))
    return "\n".join(lines) + "\n"


@dataclass
class UnseenResult:
    detected: int
    total: int
    verdicts: List[Dict] = field(default_factory=list)

    def to_dict(self):
        return {"detected": self.detected, "total": self.total, "verdicts": self.verdicts}


def evaluate_unseen(model, unseen: Dataset, vocab: NGramVocab, selected=None,
                    vocab_id: Optional[str] = None) -> UnseenResult:
    """Score previously unseen traces.

    ``detected`` counts malicious predictions among truly malicious samples,
    ``total`` is the number of truly malicious samples. With ``selected`` the
    encoded rows are restricted to those vocabulary columns (in the given
    order) before prediction.
    """
    if vocab_id is not None and vocab_id != vocab.vocab_id:
        raise VocabularyError(f"model was trained on vocab {vocab_id}, got {vocab.vocab_id}")
    if not len(unseen):
        return UnseenResult(0, 0, [])
    fm = encode_dataset(unseen, vocab)
    X = fm.X if selected is None else fm.X[:, np.asarray(list(selected), dtype=np.int64)]
    expected = getattr(model, "n_features_in_", X.shape[1])
    if X.shape[1] != expected:
        raise VocabularyError(f"model expects {expected} features, vocabulary/selection gives {X.shape[1]}")
    pred = model.predict(X)
    malicious = fm.labels == int(Label.MALICIOUS)
    verdicts = [
        {"sample_id": sid, "label": Label(int(t)).token, "predicted": Label(int(p)).token,
         "oov_grams": int(o)}
        for sid, t, p, o in zip(fm.sample_ids, fm.labels, pred, fm.oov_counts)
    ]
    return UnseenResult(int(np.sum(pred[malicious] == 1)), int(malicious.sum()), verdicts)
