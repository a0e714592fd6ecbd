"""Gini-impurity tree learners over binary (presence) features.

All learners split on feature equality: rows with the feature absent go left,
rows with it present go right. There is no threshold search. Class labels are
0 (benign) and 1 (malicious).

Node statistics are computed from the nonzeros of the CSR rows reaching the
node, so the cost of a split search scales with the number of present grams
rather than with the vocabulary size.
"""

from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

# gains closer than this are treated as tied
_GAIN_EPS = 1e-12


def gini_impurity(labels) -> float:
    """Gini impurity ``1 - sum_c p_c**2`` of a label multiset."""
    counts = Counter(np.asarray(labels).ravel().tolist())
    total = sum(counts.values())
    if total == 0:
        raise ValueError("gini impurity of an empty label set is undefined")
    return 1.0 - sum((c / total) ** 2 for c in counts.values())


def check_binary_X(X, n_features=None):
    """Validate ``X`` as a 0/1 matrix and return it as CSR with sorted indices."""
    X = check_array(X, accept_sparse="csr", dtype=None, ensure_all_finite=True)
    X = sp.csr_matrix(X)
    X.eliminate_zeros()
    if X.nnz and not np.all(X.data == 1):
        raise ValueError("features must be binary (0/1)")
    if X.data.dtype != np.uint8:
        X = X.astype(np.uint8)
    X.sort_indices()
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, but the model was trained with {n_features}")
    return X


def check_binary_y(y, n_rows):
    y = np.asarray(y).ravel()
    if len(y) != n_rows:
        raise ValueError(f"got {len(y)} labels for {n_rows} rows")
    if len(y) and not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 (benign) or 1 (malicious)")
    return y.astype(np.int64)


class Tree:
    """Flat-array binary tree.

    ``feature[i] == -1`` marks a leaf. ``value[i]`` holds the (weighted)
    class counts at node ``i``; ``n_node[i]`` their sum; ``gain[i]`` the
    impurity decrease of the split made at ``i`` (0 for leaves).
    """

    def __init__(self, n_features):
        self.n_features = n_features
        self.feature, self.left, self.right = [], [], []
        self.value, self.gain, self.n_node = [], [], []

    def add_node(self, counts):
        self.feature.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append((float(counts[0]), float(counts[1])))
        self.gain.append(0.0)
        self.n_node.append(float(counts[0] + counts[1]))
        return len(self.feature) - 1

    def finalize(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64).reshape(-1, 2)
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.n_node = np.asarray(self.n_node, dtype=np.float64)
        return self

    @property
    def node_count(self):
        return len(self.feature)

    @property
    def depth(self):
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def leaf_labels(self):
        # ties go to the lower label
        return (self.value[:, 1] > self.value[:, 0]).astype(np.int64)

    def apply(self, Xcsc):
        """Leaf id reached by every row of a CSC matrix."""
        leaves = np.empty(Xcsc.shape[0], dtype=np.int64)
        stack = [(0, np.arange(Xcsc.shape[0]))]
        while stack:
            node, rows = stack.pop()
            f = self.feature[node]
            if f < 0:
                leaves[rows] = node
                continue
            ones = Xcsc.indices[Xcsc.indptr[f] : Xcsc.indptr[f + 1]]
            has = np.isin(rows, ones, assume_unique=True)
            stack.append((self.left[node], rows[~has]))
            stack.append((self.right[node], rows[has]))
        return leaves

    def predict(self, Xcsc):
        return self.leaf_labels()[self.apply(Xcsc)]

    def importances(self):
        """Mean decrease in impurity, normalized to sum 1 (all zeros if no split)."""
        imp = np.zeros(self.n_features, dtype=np.float64)
        internal = self.feature >= 0
        if not internal.any():
            return imp
        np.add.at(imp, self.feature[internal], self.n_node[internal] / self.n_node[0] * self.gain[internal])
        total = imp.sum()
        return imp / total if total > 0 else imp

    def to_dict(self, node=0):
        if self.feature[node] < 0:
            return {"label": int(self.leaf_labels()[node]), "class_counts": self.value[node].tolist()}
        return {
            "feature": int(self.feature[node]),
            "impurity_decrease": float(self.gain[node]),
            "class_counts": self.value[node].tolist(),
            "left": self.to_dict(self.left[node]),
            "right": self.to_dict(self.right[node]),
        }

    @classmethod
    def from_dict(cls, doc, n_features):
        tree = cls(n_features)

        def visit(d):
            i = tree.add_node(d["class_counts"])
            if "feature" in d:
                tree.feature[i] = d["feature"]
                tree.gain[i] = d["impurity_decrease"]
                tree.left[i] = visit(d["left"])
                tree.right[i] = visit(d["right"])
            return i

        visit(doc)
        return tree.finalize()


def _gather(X, rows):
    """Column indices of the nonzeros in ``rows`` and the nonzero count per row."""
    starts = X.indptr[rows]
    per_row = X.indptr[rows + 1] - starts
    total = int(per_row.sum())
    offsets = np.repeat(starts - np.cumsum(per_row) + per_row, per_row)
    return X.indices[offsets + np.arange(total)], per_row


def best_split(X, y, weights, rows, features=None, max_features=None, rng=None):
    """Best equality split at a node.

    Returns ``(feature, gain)`` or ``(None, 0.0)`` when no feature separates
    the rows. A zero-gain split is still returned when it is the best one
    available; this is what lets an unrestricted tree fit parity patterns.
    Candidates are the features present in some but not all of ``rows``
    (optionally restricted to the boolean mask ``features``); with
    ``max_features`` set, that many are drawn at random from them. Ties in
    gain go to the lowest feature index.
    """
    cols, per_row = _gather(X, rows)
    if cols.size == 0:
        return None, 0.0
    n_features = X.shape[1]
    n_rows_with = np.bincount(cols, minlength=n_features)
    keep = (n_rows_with > 0) & (n_rows_with < len(rows))
    if features is not None:
        keep &= features
    cand = np.flatnonzero(keep)
    if cand.size == 0:
        return None, 0.0
    if max_features is not None and cand.size > max_features:
        cand = np.sort(rng.choice(cand, size=max_features, replace=False))

    w = weights[rows]
    wy = w * y[rows]
    r_w = np.bincount(cols, weights=np.repeat(w, per_row), minlength=n_features)[cand]
    r_1 = np.bincount(cols, weights=np.repeat(wy, per_row), minlength=n_features)[cand]
    W, W1 = w.sum(), wy.sum()
    W0 = W - W1
    r_0 = r_w - r_1
    l_w = W - r_w
    l_1 = W1 - r_1
    l_0 = l_w - l_1
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (l_0 * l_0 + l_1 * l_1) / l_w + (r_0 * r_0 + r_1 * r_1) / r_w
    score = np.where((l_w > 0) & (r_w > 0), score, -np.inf)
    gain = (score - (W0 * W0 + W1 * W1) / W) / W
    top = gain.max()
    if not np.isfinite(top):
        return None, 0.0
    j = int(np.flatnonzero(gain >= top - _GAIN_EPS)[0])
    return int(cand[j]), max(float(gain[j]), 0.0)


def build_tree(X, y, weights=None, counts=None, max_depth=None, min_samples_split=2,
               max_features=None, features=None, rng=None):
    """Greedy CART growth on a CSR 0/1 matrix.

    ``counts`` are integer row multiplicities (bootstrap) used for the
    ``min_samples_split`` rule; ``weights`` default to ``counts``. Rows with
    zero count do not take part.
    """
    n_rows, n_features = X.shape
    counts = np.ones(n_rows) if counts is None else np.asarray(counts, dtype=np.float64)
    weights = counts if weights is None else np.asarray(weights, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tree = Tree(n_features)
    Xcsc = X.tocsc()
    rows0 = np.flatnonzero(counts > 0)

    def node_counts(rows):
        w = weights[rows]
        w1 = float(np.dot(w, y[rows]))
        return float(w.sum()) - w1, w1

    stack = [(tree.add_node(node_counts(rows0)), rows0, 0)]
    while stack:
        node, rows, depth = stack.pop()
        c0, c1 = tree.value[node]
        if (c0 == 0 or c1 == 0 or counts[rows].sum() < min_samples_split
                or (max_depth is not None and depth >= max_depth)):
            continue
        f, gain = best_split(X, y, weights, rows, features, max_features, rng)
        if f is None:
            continue
        ones = Xcsc.indices[Xcsc.indptr[f] : Xcsc.indptr[f + 1]]
        has = np.isin(rows, ones, assume_unique=True)
        left_rows, right_rows = rows[~has], rows[has]
        tree.feature[node] = f
        tree.gain[node] = gain
        tree.left[node] = tree.add_node(node_counts(left_rows))
        tree.right[node] = tree.add_node(node_counts(right_rows))
        stack.append((tree.right[node], right_rows, depth + 1))
        stack.append((tree.left[node], left_rows, depth + 1))
    return tree.finalize()



class _TreeClassifierBase(ClassifierMixin, BaseEstimator):
    def _check_fit_input(self, X, y):
        X = check_binary_X(X)
        y = check_binary_y(y, X.shape[0])
        if X.shape[0] == 0:
            raise ValueError("cannot fit on an empty matrix")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return X, y

    def _check_predict_input(self, X):
        check_is_fitted(self)
        return check_binary_X(X, self.n_features_in_).tocsc()


class DecisionTreeClassifier(_TreeClassifierBase):
    """CART classification tree over binary features.

    Parameters
    ----------
    max_depth : int or None
        Unlimited when None.
    min_samples_split : int
        Nodes with fewer samples become leaves.
    max_features : int or None
        Features drawn at random per node; all candidates when None.
    random_state : int or None
        Seeds the per-node feature draw.
    """

    def __init__(self, max_depth=None, min_samples_split=2, max_features=None, random_state=None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None, feature_subset=None):
        X, y = self._check_fit_input(X, y)
        rng = np.random.default_rng(self.random_state)
        features = None
        if feature_subset is not None:
            features = np.zeros(X.shape[1], dtype=bool)
            features[np.asarray(list(feature_subset), dtype=np.int64)] = True
        self.tree_ = build_tree(
            X, y, weights=sample_weight, max_depth=self.max_depth,
            min_samples_split=self.min_samples_split, max_features=self.max_features,
            features=features, rng=rng,
        )
        return self

    def predict(self, X):
        return self.tree_.predict(self._check_predict_input(X))

    def predict_proba(self, X):
        v = self.tree_.value[self.tree_.apply(self._check_predict_input(X))]
        return v / v.sum(axis=1, keepdims=True)

    @property
    def feature_importances_(self):
        check_is_fitted(self)
        return self.tree_.importances()

    def get_depth(self):
        check_is_fitted(self)
        return self.tree_.depth


def _resolve_max_features(max_features, n_features):
    if max_features is None or max_features == "all":
        return None
    if max_features == "sqrt":
        return max(1, int(np.floor(np.sqrt(n_features))))
    if max_features == "log2":
        return max(1, int(np.floor(np.log2(max(n_features, 2)))))
    if isinstance(max_features, float):
        return max(1, int(max_features * n_features))
    return int(max_features)


class RandomForestClassifier(_TreeClassifierBase):
    """Bagged CART trees with per-node random feature subsets.

    Tree ``t`` draws its bootstrap sample and feature subsets from an RNG
    seeded with ``(random_state, t)``, so the fitted forest does not depend on
    ``n_jobs``. Prediction is a majority vote; a tied vote predicts 0.
    """

    def __init__(self, n_trees=100, max_features="sqrt", bootstrap=True, max_depth=None,
                 min_samples_split=2, random_state=0, n_jobs=1):
        self.n_trees = n_trees
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit_one(self, X, y, t):
        rng = np.random.default_rng([self.random_state or 0, t])
        n = X.shape[0]
        counts = np.bincount(rng.integers(0, n, n), minlength=n) if self.bootstrap else np.ones(n)
        return build_tree(
            X, y, counts=counts, max_depth=self.max_depth, min_samples_split=self.min_samples_split,
            max_features=self.max_features_, rng=rng,
        )

    def fit(self, X, y):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        X, y = self._check_fit_input(X, y)
        self.max_features_ = _resolve_max_features(self.max_features, X.shape[1])
        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                self.trees_ = list(pool.map(lambda t: self._fit_one(X, y, t), range(self.n_trees)))
        else:
            self.trees_ = [self._fit_one(X, y, t) for t in range(self.n_trees)]
        return self

    def _votes(self, Xcsc):
        return np.sum([t.predict(Xcsc) for t in self.trees_], axis=0)

    def predict(self, X):
        votes = self._votes(self._check_predict_input(X))
        return (2 * votes > len(self.trees_)).astype(np.int64)

    def predict_proba(self, X):
        p1 = self._votes(self._check_predict_input(X)) / len(self.trees_)
        return np.column_stack([1 - p1, p1])

    @property
    def feature_importances_(self):
        check_is_fitted(self)
        imp = np.mean([t.importances() for t in self.trees_], axis=0)
        total = imp.sum()
        return imp / total if total > 0 else imp


class AdaBoostClassifier(_TreeClassifierBase):
    """Discrete AdaBoost (SAMME, two classes) over depth-1 Gini stumps.

    Boosting stops early when a stump has weighted error 0 (kept with unit
    weight) or error >= 0.5 (discarded), or when no stump can split. With no
    accepted stump the model predicts the training majority class.
    ``random_state`` is recorded for interface symmetry; fitting is
    deterministic.
    """

    def __init__(self, n_rounds=50, random_state=0):
        self.n_rounds = n_rounds
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y)
        if len(np.unique(y)) < 2:
            raise ValueError("AdaBoost needs both classes in the training labels")
        n = X.shape[0]
        w = np.full(n, 1.0 / n)
        Xcsc = X.tocsc()
        self.stumps_, self.alphas_ = [], []
        self.majority_ = int(np.sum(y) * 2 > n)
        for _ in range(self.n_rounds):
            stump = build_tree(X, y, weights=w, max_depth=1)
            if stump.node_count == 1:
                break
            miss = stump.predict(Xcsc) != y
            err = float(w[miss].sum() / w.sum())
            if err >= 0.5:
                break
            if err <= 0.0:
                self.stumps_.append(stump)
                self.alphas_.append(1.0)
                break
            alpha = np.log((1.0 - err) / err)
            self.stumps_.append(stump)
            self.alphas_.append(float(alpha))
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        self.alphas_ = np.asarray(self.alphas_, dtype=np.float64)
        return self

    def decision_function(self, X):
        Xcsc = self._check_predict_input(X)
        score = np.zeros(Xcsc.shape[0])
        for stump, alpha in zip(self.stumps_, self.alphas_):
            score += alpha * (2 * stump.predict(Xcsc) - 1)
        return score

    def predict(self, X):
        if not len(self.stumps_):
            check_is_fitted(self)
            return np.full(check_binary_X(X, self.n_features_in_).shape[0], self.majority_, dtype=np.int64)
        return (self.decision_function(X) > 0).astype(np.int64)

    @property
    def feature_importances_(self):
        check_is_fitted(self)
        imp = np.zeros(self.n_features_in_)
        for stump, alpha in zip(self.stumps_, self.alphas_):
            imp[stump.feature[0]] += alpha
        total = imp.sum()
        return imp / total if total > 0 else imp


CLASSIFIERS = {
    "DT": DecisionTreeClassifier,
    "RF": RandomForestClassifier,
    "AdaBoost": AdaBoostClassifier,
}


def make_classifier(kind, **params):
    """Instantiate a learner by its short name (``DT``, ``RF`` or ``AdaBoost``)."""
    try:
        cls = CLASSIFIERS[kind]
    except KeyError:
        raise ValueError(f"unknown classifier kind {kind!r}; choose from {sorted(CLASSIFIERS)}") from None
    return cls(**params)


def kind_of(estimator):
    for kind, cls in CLASSIFIERS.items():
        if type(estimator) is cls:
            return kind
    raise TypeError(f"{type(estimator).__name__} is not a callgram tree learner")
