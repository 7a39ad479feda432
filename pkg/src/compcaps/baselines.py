"""Reference classifiers: k-nearest neighbours, Gaussian naive Bayes and an MLP.

All three share ``fit(X, y)``, ``predict(X)``, ``predict_proba(X)`` and
``score(X, y)`` (mean accuracy).  Labels are arbitrary integers; the sorted
distinct training labels define the class order of ``predict_proba``.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import logsumexp

from . import tensor as T
from .errors import DimensionError, NotFittedError, ParameterError
from .tensor import Tensor


def euclid(x, y) -> float:
    """Euclidean distance between two equal-length vectors."""
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"euclid: lengths {x.size} and {y.size} differ")
    return float(np.sqrt(np.sum((x - y) ** 2)))


def bayes_rule(p_b_given_a: float, p_a: float, p_b: float) -> float:
    """P(A|B) = P(B|A) P(A) / P(B)."""
    if p_b <= 0:
        raise ParameterError("P(B) must be positive")
    return p_b_given_a * p_a / p_b


def _check_xy(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D sample matrix, got shape {X.shape}")
    if y is None:
        return X
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise DimensionError(f"{X.shape[0]} samples but {y.shape} labels")
    if X.shape[0] == 0:
        raise DimensionError("cannot fit on zero samples")
    return X, y.astype(int)


class _Classifier:
    classes_: np.ndarray | None = None

    def _require_fit(self):
        if self.classes_ is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        # argmax keeps the first maximum, i.e. the lower class on ties
        return self.classes_[np.argmax(proba, axis=1)]

    def score(self, X, y) -> float:
        X, y = _check_xy(X, y)
        return float(np.mean(self.predict(X) == y))

    def predict_proba(self, X) -> np.ndarray:
        raise NotImplementedError


class KnnModel(_Classifier):
    """Uniformly weighted majority vote over the ``k`` nearest training rows."""

    def __init__(self, k: int = 10):
        if k < 1:
            raise ParameterError("k must be >= 1")
        self.k = k
        self.X = self.y = None

    def fit(self, X, y) -> "KnnModel":
        X, y = _check_xy(X, y)
        if self.k > X.shape[0]:
            raise ParameterError(f"k={self.k} exceeds the {X.shape[0]} training samples")
        self.X, self.classes_ = X, np.unique(y)
        self.y = np.searchsorted(self.classes_, y)
        return self

    def neighbours(self, x) -> np.ndarray:
        """Training indices of the ``k`` nearest rows; ties go to the lower index."""
        self._require_fit()
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.X.shape[1]:
            raise DimensionError("query dimension does not match the training data")
        d = np.sqrt(((self.X - x) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(len(d)), d))
        return order[:self.k]

    def predict_proba(self, X) -> np.ndarray:
        self._require_fit()
        X = _check_xy(X)
        out = np.zeros((X.shape[0], len(self.classes_)))
        for r, x in enumerate(X):
            votes = np.bincount(self.y[self.neighbours(x)], minlength=len(self.classes_))
            out[r] = votes / self.k
        return out


def knn_predict(model: KnnModel, x):
    return model.predict(np.asarray(x, dtype=float).reshape(1, -1))[0]


class NbModel(_Classifier):
    """Gaussian naive Bayes with variance smoothing relative to the largest feature variance."""

    def __init__(self, var_smoothing: float = 1e-9):
        if var_smoothing < 0:
            raise ParameterError("var_smoothing must be non-negative")
        self.var_smoothing = var_smoothing
        self.means = self.vars = self.priors = None

    def fit(self, X, y) -> "NbModel":
        X, y = _check_xy(X, y)
        self.classes_ = np.unique(y)
        top = float(X.var(axis=0).max())
        # a constant feature matrix would otherwise leave zero variances
        eps = self.var_smoothing * (top if top > 0 else 1.0)
        self.means = np.stack([X[y == c].mean(axis=0) for c in self.classes_])
        self.vars = np.stack([X[y == c].var(axis=0) for c in self.classes_]) + eps
        if not np.all(self.vars > 0):
            raise ParameterError("variance smoothing left a zero variance; raise var_smoothing")
        self.priors = np.array([np.mean(y == c) for c in self.classes_])
        return self

    def joint_log_likelihood(self, X) -> np.ndarray:
        self._require_fit()
        X = _check_xy(X)
        if X.shape[1] != self.means.shape[1]:
            raise DimensionError("feature count does not match the fitted model")
        ll = -0.5 * (np.log(2 * np.pi * self.vars).sum(axis=1)[None, :]
                     + (((X[:, None, :] - self.means[None]) ** 2) / self.vars[None]).sum(axis=2))
        return ll + np.log(self.priors)[None, :]

    def predict_proba(self, X) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        return np.exp(jll - logsumexp(jll, axis=1, keepdims=True))


def nb_posterior(model: NbModel, x) -> np.ndarray:
    return model.predict_proba(np.asarray(x, dtype=float).reshape(1, -1))[0]


class MlpModel(_Classifier):
    """One relu hidden layer, softmax output, L2 penalty, Adam and early stopping.

    With ``early_stopping`` a ``validation_fraction`` of the training rows is
    held out; training stops once the held-out accuracy has not improved by
    ``tol`` for ``patience`` epochs and the best weights are restored.  Without
    it the same rule is applied to the training loss (decrease by ``tol``).
    """

    def __init__(self, hidden: int = 100, alpha: float = 1.0, lr: float = 1e-3, max_epochs: int = 200,
                 batch_size: int = 200, early_stopping: bool = True, validation_fraction: float = 0.1,
                 tol: float = 1e-3, patience: int = 10, seed: int = 0):
        if not 0 < validation_fraction < 1:
            raise ParameterError("validation_fraction must lie in (0, 1)")
        if hidden < 1 or max_epochs < 1 or batch_size < 1 or patience < 1:
            raise ParameterError("hidden, max_epochs, batch_size and patience must be positive")
        self.hidden, self.alpha, self.lr = hidden, alpha, lr
        self.max_epochs, self.batch_size = max_epochs, batch_size
        self.early_stopping, self.validation_fraction = early_stopping, validation_fraction
        self.tol, self.patience, self.seed = tol, patience, seed
        self.params: list[Tensor] | None = None
        self.epochs_run = 0
        self.history: list[float] = []

    def _logits(self, X, params) -> Tensor:
        w1, b1, w2, b2 = params
        h = T.relu(T.linear(Tensor(X), w1, b1))
        return T.linear(h, w2, b2)

    def fit(self, X, y) -> "MlpModel":
        X, y = _check_xy(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            warnings.warn("MLP fitted on a single class; predictions are constant", stacklevel=2)
        target = np.searchsorted(self.classes_, y)
        rng = np.random.default_rng(self.seed)
        n_feat, k = X.shape[1], len(self.classes_)
        self.params = [T.glorot_uniform(rng, (n_feat, self.hidden), n_feat, self.hidden),
                       T.zeros(self.hidden, True),
                       T.glorot_uniform(rng, (self.hidden, k), self.hidden, k),
                       T.zeros(k, True)]
        idx = rng.permutation(X.shape[0])
        n_val = int(round(self.validation_fraction * X.shape[0])) if self.early_stopping else 0
        if self.early_stopping and (n_val < 1 or n_val >= X.shape[0]):
            raise ParameterError("too few samples for an early-stopping validation split")
        val, tr = idx[:n_val], idx[n_val:]
        Xt, yt = X[tr], target[tr]
        opt = T.Adam(self.params, lr=self.lr)
        bs = min(self.batch_size, len(tr))
        best, best_params, stale = -np.inf, None, 0
        self.history = []
        for epoch in range(self.max_epochs):
            order = rng.permutation(len(tr))
            total = 0.0
            for start in range(0, len(tr), bs):
                b = order[start:start + bs]
                opt.zero_grad()
                loss = T.cross_entropy(self._logits(Xt[b], self.params), yt[b])
                w1, w2 = self.params[0], self.params[2]
                penalty = (T.square(w1).sum() + T.square(w2).sum()) * (0.5 * self.alpha / len(b))
                loss = loss + penalty
                loss.backward(self.params)
                opt.step()
                total += loss.item() * len(b)
            self.epochs_run = epoch + 1
            if self.early_stopping:
                metric = float(np.mean(self._predict_index(X[val]) == target[val]))
            else:
                metric = -total / len(tr)
            self.history.append(metric)
            if metric > best + self.tol:
                best, stale = metric, 0
                best_params = [p.data.copy() for p in self.params]
            else:
                stale += 1
                if stale >= self.patience:
                    break
        if self.early_stopping and best_params is not None:
            for p, arr in zip(self.params, best_params):
                p.data = arr
        return self

    def _predict_index(self, X) -> np.ndarray:
        return np.argmax(self._logits(X, self.params).data, axis=1)

    def predict_proba(self, X) -> np.ndarray:
        self._require_fit()
        X = _check_xy(X)
        return T.softmax(self._logits(X, self.params), axis=1).data


BASELINES = {"knn": KnnModel, "nb": NbModel, "mlp": MlpModel}
