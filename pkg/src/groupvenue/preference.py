"""Individual venue-preference learners and their evaluation metrics."""

from __future__ import annotations

import json

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

FEATURES = ("familiarity", "mobility", "weekend", "high_density")


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


class Standardizer(BaseEstimator, TransformerMixin):
    """Per-feature z-scoring; constant features map to 0."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X)
        safe = np.where(self.scale_ > 0, self.scale_, 1.0)
        return np.where(self.scale_ > 0, (X - self.mean_) / safe, 0.0)

    def to_dict(self):
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}


# --------------------------------------------------------------------------
# regression tree


def _best_split(X, y, min_leaf):
    """All (gain, feature, threshold) candidates achieving the best SSE drop."""
    n, d = X.shape
    total, total_sq = y.sum(), (y * y).sum()
    parent_sse = total_sq - total * total / n
    best_gain = 0.0
    best = []
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        cs = np.cumsum(ys)[:-1]
        cs2 = np.cumsum(ys * ys)[:-1]
        nl = np.arange(1, n)
        nr = n - nl
        ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        sse_l = cs2 - cs * cs / nl
        sse_r = (total_sq - cs2) - (total - cs) ** 2 / nr
        gain = np.where(ok, parent_sse - sse_l - sse_r, -np.inf)
        g = gain.max()
        if g > best_gain + 1e-12:
            best_gain = g
            best = []
        if g >= best_gain - 1e-12 and g > 1e-12:
            for i in np.flatnonzero(gain >= best_gain - 1e-12):
                best.append((f, 0.5 * (xs[i] + xs[i + 1])))
    return best_gain, best


class CARTRegressor(BaseEstimator, RegressorMixin):
    """Least-squares regression tree grown greedily by variance reduction.

    ``random_state`` only breaks ties between equally good splits.
    """

    def __init__(self, max_depth=6, min_leaf=5, random_state=0):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        y = y.astype(float)
        if X.shape[0] < 2 * self.min_leaf:
            raise ValueError(
                f"need at least {2 * self.min_leaf} samples, got {X.shape[0]}"
            )
        rng = np.random.default_rng(self.random_state)
        feature, threshold, left, right, value, n_node = [], [], [], [], [], []

        def grow(idx, depth):
            node = len(value)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(y[idx].mean()))
            n_node.append(int(idx.size))
            if depth >= self.max_depth or idx.size < 2 * self.min_leaf or np.ptp(y[idx]) == 0:
                return node
            gain, cands = _best_split(X[idx], y[idx], self.min_leaf)
            if not cands:
                return node
            f, thr = cands[int(rng.integers(len(cands)))] if len(cands) > 1 else cands[0]
            go_left = X[idx, f] <= thr
            feature[node], threshold[node] = int(f), float(thr)
            left[node] = grow(idx[go_left], depth + 1)
            right[node] = grow(idx[~go_left], depth + 1)
            return node

        grow(np.arange(X.shape[0]), 0)
        self.feature_ = np.array(feature)
        self.threshold_ = np.array(threshold)
        self.left_ = np.array(left)
        self.right_ = np.array(right)
        self.value_ = np.array(value)
        self.n_node_samples_ = np.array(n_node)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def depth_(self):
        def walk(k):
            if self.left_[k] < 0:
                return 0
            return 1 + max(walk(self.left_[k]), walk(self.right_[k]))

        return walk(0)

    def apply(self, X):
        check_is_fitted(self, "value_")
        X = check_array(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.left_[node] >= 0
        while active.any():
            k = node[active]
            go_left = X[active, self.feature_[k]] <= self.threshold_[k]
            node[active] = np.where(go_left, self.left_[k], self.right_[k])
            active = self.left_[node] >= 0
        return node

    def predict(self, X):
        return self.value_[self.apply(X)]

    def to_dict(self):
        return {
            "kind": "cart",
            "feature": self.feature_.tolist(),
            "threshold": self.threshold_.tolist(),
            "left": self.left_.tolist(),
            "right": self.right_.tolist(),
            "value": self.value_.tolist(),
        }


# --------------------------------------------------------------------------
# logistic regression


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticModel(BaseEstimator, ClassifierMixin):
    """L2-penalised logistic regression fit by Newton steps from zero.

    The intercept is not penalised.
    """

    def __init__(self, l2=1e-4, max_iter=500, tol=1e-8):
        self.l2 = l2
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        y = y.astype(float)
        n, d = X.shape
        A = np.column_stack((np.ones(n), X))
        penalty = np.full(d + 1, self.l2)
        penalty[0] = 0.0
        w = np.zeros(d + 1)
        step = np.inf
        for _ in range(self.max_iter):
            p = _sigmoid(A @ w)
            grad = A.T @ (p - y) / n + penalty * w
            H = (A * (p * (1 - p))[:, None]).T @ A / n + np.diag(penalty)
            H[np.diag_indices_from(H)] += 1e-12
            delta = np.linalg.solve(H, grad)
            # damp very long steps on (near) separable data
            scale = min(1.0, 10.0 / max(np.abs(delta).max(), 1e-300))
            w -= scale * delta
            step = np.abs(scale * delta).max()
            if step < self.tol:
                break
        else:
            raise ConvergenceError("logistic regression did not converge", step)
        self.intercept_ = float(w[0])
        self.coef_ = w[1:]
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return self.intercept_ + X @ self.coef_

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack((1 - p, p))

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)

    def to_dict(self):
        return {"kind": "logreg", "intercept": self.intercept_, "coef": self.coef_.tolist()}


def logreg_fit(X, y, l2=1e-4, max_iter=500, tol=1e-8) -> np.ndarray:
    m = LogisticModel(l2, max_iter, tol).fit(X, y)
    return np.r_[m.intercept_, m.coef_]


def logreg_predict(w, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _sigmoid(w[0] + X @ np.asarray(w[1:]))


class PreferenceModel(BaseEstimator, RegressorMixin):
    """Standardise features, then fit CART or logistic regression.

    Predictions are probabilities that a member votes for a venue.
    """

    def __init__(self, learner="cart", max_depth=6, min_leaf=5, l2=1e-4, random_state=0):
        self.learner = learner
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.l2 = l2
        self.random_state = random_state

    def fit(self, X, y):
        self.scaler_ = Standardizer().fit(X)
        Z = self.scaler_.transform(X)
        if self.learner == "cart":
            self.model_ = CARTRegressor(self.max_depth, self.min_leaf, self.random_state).fit(Z, y)
        elif self.learner == "logreg":
            self.model_ = LogisticModel(self.l2).fit(Z, y)
        else:
            raise ValueError(f"unknown learner {self.learner!r}")
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        Z = self.scaler_.transform(X)
        if isinstance(self.model_, LogisticModel):
            return self.model_.predict_proba(Z)[:, 1]
        return self.model_.predict(Z)

    def to_json(self) -> str:
        return json.dumps(
            {"features": list(FEATURES), "standardizer": self.scaler_.to_dict(), "model": self.model_.to_dict()}
        )


# --------------------------------------------------------------------------
# metrics


def auc(scores, labels) -> float:
    """Area under the ROC curve; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1_at(scores, labels, threshold) -> float:
    pred = np.asarray(scores) >= threshold
    labels = np.asarray(labels).astype(bool)
    tp = np.count_nonzero(pred & labels)
    if pred.sum() == 0 or tp == 0:
        return 0.0
    precision = tp / pred.sum()
    recall = tp / labels.sum()
    return float(2 * precision * recall / (precision + recall))


def best_threshold(scores, labels) -> float:
    """Score cut-off maximising Youden's J (TPR - FPR) on training data."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    P, N = labels.sum(), (~labels).sum()
    cand = np.unique(scores)
    best_j, best_t = -np.inf, cand[0] if cand.size else 0.5
    for t in cand:
        pred = scores >= t
        tpr = (pred & labels).sum() / P if P else 0.0
        fpr = (pred & ~labels).sum() / N if N else 0.0
        if tpr - fpr > best_j + 1e-15:
            best_j, best_t = tpr - fpr, t
    return float(best_t)


# --------------------------------------------------------------------------
# folds


def _deal(units, rates, k, seed):
    """Serpentine deal of units sorted by positive rate; shuffled first so
    equal rates are split by the seed."""
    rng = np.random.default_rng(seed)
    units = list(units)
    perm = rng.permutation(len(units))
    units = [units[i] for i in perm]
    rates = np.asarray(rates, dtype=float)[perm]
    order = np.argsort(-rates, kind="stable")
    fold_of = {}
    for pos, i in enumerate(order):
        lap, r = divmod(pos, k)
        fold_of[units[i]] = r if lap % 2 == 0 else k - 1 - r
    return fold_of


def user_kfold(users, labels, k=5, seed=0, mode="user"):
    """Train/test index pairs over samples.

    ``mode="user"`` keeps every user's samples in one fold;
    ``mode="sample"`` instead spreads each user's samples across folds,
    stratified by label.
    """
    users = np.asarray(users, dtype=object)
    labels = np.asarray(labels).astype(int)
    distinct = sorted(set(users.tolist()), key=str)
    if len(distinct) < k:
        raise ValueError(f"need at least {k} distinct users, got {len(distinct)}")
    fold = np.empty(users.size, dtype=np.int64)
    if mode == "user":
        rates = [labels[users == u].mean() for u in distinct]
        fold_of = _deal(distinct, rates, k, seed)
        fold[:] = [fold_of[u] for u in users]
    elif mode == "sample":
        rng = np.random.default_rng(seed)
        for u in distinct:
            idx = np.flatnonzero(users == u)
            idx = idx[rng.permutation(idx.size)]
            idx = idx[np.argsort(-labels[idx], kind="stable")]
            offset = int(rng.integers(k))
            fold[idx] = (np.arange(idx.size) + offset) % k
    else:
        raise ValueError(f"unknown fold mode {mode!r}")
    all_idx = np.arange(users.size)
    return [(all_idx[fold != f], all_idx[fold == f]) for f in range(k)]


def unit_folds(units, rates, k=5, seed=0) -> dict:
    """Fold number per unit (e.g. per group), balanced on ``rates``."""
    units = list(units)
    if len(units) < k:
        raise ValueError(f"need at least {k} units, got {len(units)}")
    return _deal(units, rates, k, seed)
