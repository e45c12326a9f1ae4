"""Small models with analytic per-sample gradients.

Parameters live in one flat vector; ``layout`` maps it onto weight tensors,
one :class:`~vargrad.core.ParameterGroup` each. Computation follows the dtype
of the parameter vector, so float64 parameters give float64 gradients (used by
the finite-difference checks).
"""
from __future__ import annotations

import numpy as np

from .core import DTYPE, make_layout


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


class LogisticRegression:
    """Binary logistic regression, labels in {0, 1}."""

    kind = "logistic"

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.layout = make_layout([n_features, 1], ["weight", "bias"])
        self.n_params = n_features + 1

    def init_params(self, rng):
        return (0.01 * rng.standard_normal(self.n_params)).astype(DTYPE)

    def _logits(self, params, X):
        return X @ params[:-1] + params[-1]

    def per_sample_gradients(self, params, X, y):
        """Rows are ``(sigmoid(w.x + b) - y) * [x, 1]``."""
        X = np.asarray(X, params.dtype)
        err = _sigmoid(self._logits(params, X)) - np.asarray(y, params.dtype)
        out = np.empty((X.shape[0], self.n_params), params.dtype)
        out[:, :-1] = err[:, None] * X
        out[:, -1] = err
        return out

    def batch_gradient(self, params, X, y):
        X = np.asarray(X, params.dtype)
        err = _sigmoid(self._logits(params, X)) - np.asarray(y, params.dtype)
        return np.concatenate([X.T @ err, [err.sum()]]).astype(params.dtype) / X.shape[0]

    def per_sample_loss(self, params, X, y):
        z = self._logits(params, np.asarray(X, params.dtype))
        y = np.asarray(y, params.dtype)
        return np.logaddexp(0, z) - y * z

    def loss(self, params, X, y):
        return float(np.mean(self.per_sample_loss(params, X, y)))

    def predict(self, params, X):
        return (self._logits(params, np.asarray(X, params.dtype)) > 0).astype(np.int64)


class MLP:
    """One tanh hidden layer followed by a softmax classifier."""

    kind = "mlp"

    def __init__(self, n_features: int, hidden: int, n_classes: int):
        self.n_features, self.hidden, self.n_classes = n_features, hidden, n_classes
        self.shapes = [(hidden, n_features), (hidden,), (n_classes, hidden), (n_classes,)]
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.layout = make_layout(sizes, ["hidden.weight", "hidden.bias", "out.weight", "out.bias"])
        self.n_params = sum(sizes)

    def unpack(self, params):
        return [params[g.slice()].reshape(shape) for g, shape in zip(self.layout, self.shapes)]

    def init_params(self, rng):
        w1 = rng.standard_normal(self.shapes[0]) / np.sqrt(self.n_features)
        w2 = rng.standard_normal(self.shapes[2]) / np.sqrt(self.hidden)
        parts = [w1, np.zeros(self.hidden), w2, np.zeros(self.n_classes)]
        return np.concatenate([p.ravel() for p in parts]).astype(DTYPE)

    def _forward(self, params, X):
        w1, b1, w2, b2 = self.unpack(params)
        h = np.tanh(X @ w1.T + b1)
        logits = h @ w2.T + b2
        return h, logits

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def per_sample_gradients(self, params, X, y):
        """Backward pass for each sample, stacked as rows of a ``(B, N)`` array."""
        X = np.asarray(X, params.dtype)
        y = np.asarray(y)
        _, _, w2, _ = self.unpack(params)
        h, logits = self._forward(params, X)
        dlogits = np.exp(self._log_softmax(logits))
        dlogits[np.arange(len(y)), y] -= 1
        dh = (dlogits @ w2) * (1 - h * h)
        parts = [
            np.einsum("bh,bf->bhf", dh, X).reshape(len(X), -1),
            dh,
            np.einsum("bc,bh->bch", dlogits, h).reshape(len(X), -1),
            dlogits,
        ]
        return np.concatenate(parts, axis=1).astype(params.dtype)

    def batch_gradient(self, params, X, y):
        return self.per_sample_gradients(params, X, y).mean(axis=0)

    def per_sample_loss(self, params, X, y):
        _, logits = self._forward(params, np.asarray(X, params.dtype))
        return -self._log_softmax(logits)[np.arange(len(y)), np.asarray(y)]

    def loss(self, params, X, y):
        return float(np.mean(self.per_sample_loss(params, X, y)))

    def predict(self, params, X):
        _, logits = self._forward(params, np.asarray(X, params.dtype))
        return logits.argmax(axis=1)


def per_sample_gradients(model, params, X, y):
    return model.per_sample_gradients(params, X, y)


def build_model(spec: dict, n_features: int, n_classes: int):
    kind = spec.get("kind", "logistic")
    if kind == "logistic":
        return LogisticRegression(n_features)
    if kind == "mlp":
        return MLP(n_features, int(spec.get("hidden", 32)), n_classes)
    raise ValueError(f"unknown model kind {kind!r}")
