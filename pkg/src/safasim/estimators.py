"""scikit-learn style estimators whose ``fit`` is a simulated federated run.

The training set is split across ``n_clients`` simulated devices and the
chosen protocol runs for ``rounds`` rounds; the final global model becomes
the fitted estimator. Per-round reports are kept in ``history_``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets, type_of_target
from sklearn.utils.validation import check_is_fitted, validate_data

from .env import TimingConfig
from .learners import Dataset, LearnerSpec, ModelKind, TaskKind, design_matrix, scores
from .simulation import Simulation


class _FederatedEstimator(BaseEstimator):
    _model_kind: ModelKind
    _task_kind: TaskKind

    def __init__(self, protocol="safa", n_clients=5, fraction=0.1, crash_prob=0.0, lag_tolerance=5,
                 rounds=100, learning_rate=0.01, epochs=3, batch_size=5, reg=1e-4,
                 fit_intercept=True, t_lim=830.0, per_model_dist_time=0.404, random_state=0):
        self.protocol = protocol
        self.n_clients = n_clients
        self.fraction = fraction
        self.crash_prob = crash_prob
        self.lag_tolerance = lag_tolerance
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.reg = reg
        self.fit_intercept = fit_intercept
        self.t_lim = t_lim
        self.per_model_dist_time = per_model_dist_time
        self.random_state = random_state

    def _spec(self):
        return LearnerSpec(self._model_kind, self.learning_rate, self.epochs, self.batch_size,
                           self.reg, self.fit_intercept)

    def _simulate(self, dataset: Dataset):
        if self.n_clients > dataset.n:
            raise ValueError(f"n_clients={self.n_clients} exceeds n_samples={dataset.n}")
        seed = 0 if self.random_state is None else int(self.random_state)
        sim = Simulation(
            self.protocol, dataset, self._spec(),
            TimingConfig(t_lim=self.t_lim, per_model_dist_time=self.per_model_dist_time),
            m=self.n_clients, fraction=self.fraction, crash_prob=self.crash_prob,
            lag_tolerance=self.lag_tolerance, seed=seed,
        )
        sim.run(self.rounds)
        self.history_ = [r.as_row() for r in sim.reports]
        self.summary_ = sim.summary()
        return sim.global_model.weights

    def _unpack(self, w, width):
        W = w.reshape(self.n_features_in_ + int(self.fit_intercept), width)
        self.coef_ = W[:-1].T.copy() if self.fit_intercept else W.T.copy()
        self.intercept_ = W[-1].copy() if self.fit_intercept else np.zeros(width)
        if width == 1:
            self.coef_, self.intercept_ = self.coef_.ravel(), float(self.intercept_[0])
        self.weights_ = w

    def _raw(self, X, num_classes=None):
        check_is_fitted(self, "weights_")
        X = validate_data(self, X, reset=False)
        return scores(self.weights_, design_matrix(X, self._spec()), self._spec(), num_classes)


class FederatedLinearRegression(RegressorMixin, _FederatedEstimator):
    """Least-squares regression trained by federated mini-batch SGD."""

    _model_kind = ModelKind.LINEAR_REGRESSION
    _task_kind = TaskKind.REGRESSION

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        w = self._simulate(Dataset(X, y.astype(float), TaskKind.REGRESSION))
        self._unpack(w, 1)
        return self

    def predict(self, X):
        return self._raw(X)


class FederatedSoftmaxClassifier(ClassifierMixin, _FederatedEstimator):
    """Multinomial logistic regression trained by federated mini-batch SGD."""

    _model_kind = ModelKind.SOFTMAX_CLASSIFIER
    _task_kind = TaskKind.CLASSIFICATION

    def fit(self, X, y):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes, got one class")
        k = len(self.classes_)
        w = self._simulate(Dataset(X, codes, TaskKind.CLASSIFICATION, k))
        self._unpack(w, k)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "weights_")
        z = self._raw(X, len(self.classes_))
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "weights_")
        return self.classes_[self._raw(X, len(self.classes_)).argmax(axis=1)]


class FederatedLinearSVM(ClassifierMixin, _FederatedEstimator):
    """L2-regularized hinge-loss linear classifier for two classes."""

    _model_kind = ModelKind.LINEAR_SVM
    _task_kind = TaskKind.BINARY_MARGIN

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def fit(self, X, y):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need exactly two classes, got one class")
        y_type = type_of_target(y, input_name="y")
        if y_type != "binary":
            raise ValueError(f"Only binary classification is supported. The type of the target is {y_type}.")
        signed = np.where(y == self.classes_[1], 1.0, -1.0)
        w = self._simulate(Dataset(X, signed, TaskKind.BINARY_MARGIN))
        self._unpack(w, 1)
        return self

    def decision_function(self, X):
        return self._raw(X)

    def predict(self, X):
        check_is_fitted(self, "weights_")
        return self.classes_[(self.decision_function(X) > 0).astype(int)]
