"""Importance ranking, incremental chunked feature selection and top-set intersection.

The chunked search trains each classifier on the top ``i`` ranked features
for ``i = k, 2k, ...`` and, when the vocabulary size ``V`` is not a multiple
of ``k``, once more at ``i = V``. Each classifier keeps its own best F1. The
best value is only replaced on a strict improvement, so ``n_max`` is the
earliest grid point reaching the maximum.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

from callgram.evaluation import Metrics, Split, compute_metrics, stratified_split
from callgram.exceptions import VocabularyError
from callgram.featurize import FeatureMatrix
from callgram.tree import check_binary_X, check_binary_y, kind_of


@dataclass
class Ranking:
    order: np.ndarray
    scores: np.ndarray

    def top(self, i: int) -> np.ndarray:
        return self.order[:i]


def rank_features(importances) -> Ranking:
    """Sort features by importance, descending; ties by ascending index."""
    scores = np.asarray(importances, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return Ranking(order, scores[order])


def evaluation_points(n_features: int, k: int) -> List[int]:
    if k < 1:
        raise ValueError(f"chunk size must be >= 1, got {k}")
    points = list(range(k, n_features + 1, k))
    if not points or points[-1] != n_features:
        points.append(n_features)
    return points


@dataclass
class SelectionTrajectory:
    kind: str
    points: List[int] = field(default_factory=list)
    metrics: List[Metrics] = field(default_factory=list)
    f1_max: float = 0.0
    n_max: int = 0

    def record(self, i: int, m: Metrics):
        self.points.append(i)
        self.metrics.append(m)
        if m.f1 > self.f1_max:
            self.f1_max = m.f1
            self.n_max = i

    def rows(self):
        for i, m in zip(self.points, self.metrics):
            d = m.to_dict()
            yield [self.kind, i, d["accuracy"], d["precision"], d["recall"], d["f1"]]


@dataclass(frozen=True)
class FeatureSet:
    indices: FrozenSet[int]
    kind: str
    n_max: int
    vocab_id: Optional[str] = None


def top_set(ranking: Ranking, trajectory: SelectionTrajectory, vocab_id=None) -> FeatureSet:
    idx = frozenset(int(i) for i in ranking.top(trajectory.n_max))
    return FeatureSet(idx, trajectory.kind, trajectory.n_max, vocab_id)


def _split_rows(matrix: FeatureMatrix, split: Split):
    return matrix.select_ids(split.train_ids), matrix.select_ids(split.test_ids)


def _fit_score(estimator, train: FeatureMatrix, test: FeatureMatrix, columns) -> tuple:
    columns = np.asarray(columns, dtype=np.int64)
    model = clone(estimator).fit(train.X[:, columns], train.labels)
    return model, compute_metrics(test.labels, model.predict(test.X[:, columns]))


def incremental_select(matrix: FeatureMatrix, ranking: Ranking, classifiers: Sequence[BaseEstimator],
                       k: int = 100, split: Split = None, n_jobs: int = 1) -> List[SelectionTrajectory]:
    """Chunked forward selection over a fixed ranking.

    Every classifier is trained on the training rows of ``split`` restricted to
    ``ranking.order[:i]`` and scored on its test rows, for each grid point
    ``i``. Returns one trajectory per classifier in input order.
    """
    n_features = matrix.shape[1]
    if len(ranking.order) != n_features:
        raise ValueError(f"ranking covers {len(ranking.order)} features, matrix has {n_features}")
    train, test = _split_rows(matrix, split)
    grid = evaluation_points(n_features, k)

    def run(i):
        return [_fit_score(est, train, test, ranking.top(i))[1] for est in classifiers]

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, grid))
    else:
        results = [run(i) for i in grid]

    trajectories = [SelectionTrajectory(kind_of(est)) for est in classifiers]
    for i, per_clf in zip(grid, results):
        for traj, m in zip(trajectories, per_clf):
            traj.record(i, m)
    return trajectories


def intersect_top(sets: Sequence[FeatureSet]) -> FrozenSet[int]:
    """Exact intersection of two or more feature sets over one vocabulary."""
    if len(sets) < 2:
        raise ValueError("need at least two feature sets to intersect")
    vocab_ids = {s.vocab_id for s in sets}
    if len(vocab_ids) > 1:
        raise VocabularyError(f"feature sets come from different vocabularies: {sorted(map(str, vocab_ids))}")
    out = sets[0].indices
    for s in sets[1:]:
        out = out & s.indices
    return frozenset(out)


@dataclass
class ReducedResult:
    model: BaseEstimator
    metrics: Metrics
    features: List[int]
    reduction_ratio: float


def reduced_retrain(matrix: FeatureMatrix, selected, estimator: BaseEstimator, split: Split) -> ReducedResult:
    """Retrain on the selected columns (ascending index order) and score on the test rows."""
    features = sorted(int(i) for i in selected)
    if not features:
        raise ValueError("selection is empty")
    train, test = _split_rows(matrix, split)
    model, metrics = _fit_score(estimator, train, test, features)
    return ReducedResult(model, metrics, features, len(features) / matrix.shape[1])


class IncrementalSelector(SelectorMixin, BaseEstimator):
    """Select the earliest F1-maximizing prefix of an importance ranking.

    ``fit`` holds out a stratified ``1 - train_ratio`` fraction of the rows,
    ranks features by the importances of ``ranking_estimator`` (or of
    ``estimator`` when None) fitted on the remaining rows, and runs the
    chunked search with chunk size ``k``.
    """

    def __init__(self, estimator, ranking_estimator=None, k=100, train_ratio=0.7, random_state=0):
        self.estimator = estimator
        self.ranking_estimator = ranking_estimator
        self.k = k
        self.train_ratio = train_ratio
        self.random_state = random_state

    def fit(self, X, y):
        X = check_binary_X(X)
        y = check_binary_y(y, X.shape[0])
        ids = [str(i) for i in range(X.shape[0])]
        fm = FeatureMatrix(X, y, ids, "", 0)
        split = stratified_split(ids, y, self.train_ratio, self.random_state)
        ranker = clone(self.ranking_estimator if self.ranking_estimator is not None else self.estimator)
        train = fm.select_ids(split.train_ids)
        self.ranking_ = rank_features(ranker.fit(train.X, train.labels).feature_importances_)
        self.trajectory_ = incremental_select(fm, self.ranking_, [self.estimator], self.k, split)[0]
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self)
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.ranking_.top(self.trajectory_.n_max)] = True
        return mask
