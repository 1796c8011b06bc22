"""scikit-learn compatible wrappers.

``SharpNetClassifier`` trains a ReLU MLP with the package's own trainer;
``SharpnessMeter`` measures a fitted classifier on a labeled sample.

    >>> clf = SharpNetClassifier(hidden_layer_sizes=(32,), max_epochs=20).fit(X, y)
    >>> meter = SharpnessMeter(clf).fit(X, y)
    >>> meter.normalized_
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from . import hessian, sharpness, trainer
from .data import LabeledDataset
from .nn import forward


class SharpNetClassifier(ClassifierMixin, BaseEstimator):
    """Fully connected ReLU network trained with Adam (or SGD) on cross-entropy.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden layers.
    max_epochs : int
        Passes over the training data.
    batch_size : int
    learning_rate : float
    optimizer : {"adam", "sgd"}
    random_state : int
        Seeds initialization and minibatch order; identical seeds give
        bit-identical weights.
    """

    def __init__(self, hidden_layer_sizes=(64, 64), max_epochs=50, batch_size=128, learning_rate=1e-3, optimizer="adam", random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.random_state = random_state

    def _config(self):
        opt = trainer.Adam(lr=self.learning_rate) if self.optimizer == "adam" else trainer.SGD(lr=self.learning_rate)
        return trainer.TrainConfig(opt, self.max_epochs, self.batch_size, int(self.random_state), "ce")

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        sizes = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        self.network_ = trainer.mlp(sizes)
        rec = trainer.train(self.network_, LabeledDataset(X, encoded, len(self.classes_)), self._config())
        self.params_ = rec.params
        self.loss_curve_ = rec.loss_curve
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return forward(self.network_, self.params_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self)
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def encode(self, y):
        """Map original labels to the class indices used by the network."""
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= len(self.classes_)) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValueError("labels not seen during fit")
        return idx


class SharpnessMeter(BaseEstimator):
    """Sharpness metrics of a fitted :class:`SharpNetClassifier` on ``(X, y)``.

    After ``fit`` the full report is in ``report_`` and the headline numbers in
    ``normalized_``, ``matrix_normalized_``, ``trace_``.
    """

    def __init__(self, classifier=None, loss="nsce", lam=0.5, num_probes=100, step_coefficient=1e-4, curvature="hutchinson", fisher=True, random_state=0):
        self.classifier = classifier
        self.loss = loss
        self.lam = lam
        self.num_probes = num_probes
        self.step_coefficient = step_coefficient
        self.curvature = curvature
        self.fisher = fisher
        self.random_state = random_state

    def fit(self, X, y):
        if self.classifier is None:
            raise ValueError("SharpnessMeter needs a fitted classifier")
        clf = self.classifier
        check_is_fitted(clf)
        X, y = check_X_y(X, y, dtype=np.float64)
        labels = clf.encode(y)
        net, params = clf.network_, clf.params_
        probes = hessian.ProbeConfig(self.num_probes, self.step_coefficient, seed=self.random_state)
        if self.curvature == "exact":
            h = hessian.exact_diag_oracle(net, params, X, labels, self.loss)
            h.values = np.maximum(h.values, 0.0)
        elif self.curvature == "hutchinson":
            h = None
        else:
            raise ValueError(f"unknown curvature method {self.curvature!r}")
        self.report_ = sharpness.measure(net, params, X, labels, self.loss, self.lam, probes, h=h, fisher=self.fisher)
        self.normalized_ = self.report_.normalized
        self.matrix_normalized_ = self.report_.matrix_normalized
        self.trace_ = self.report_.trace_sharpness
        return self

    def transform(self, X=None):
        """Headline metrics as a one-row array: trace, Frobenius, matrix-normalized, normalized."""
        check_is_fitted(self)
        r = self.report_
        return np.array([[r.trace_sharpness, r.frobenius_sq_sum, r.matrix_normalized, r.normalized]])
