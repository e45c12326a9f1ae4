"""Synthetic classification data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DTYPE


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def n_features(self) -> int:
        return self.X_train.shape[1]


def make_blobs(n_samples=5000, n_features=32, n_classes=2, separation=4.0,
               informative=None, test_fraction=0.2, seed=0) -> Dataset:
    """Isotropic unit-variance Gaussian blobs.

    Class centers are random directions of length ``separation / 2`` living in
    the first ``informative`` coordinates; the remaining coordinates are pure
    noise and carry no label information.
    """
    rng = np.random.default_rng(seed)
    informative = n_features if informative is None else informative
    dirs = rng.standard_normal((n_classes, informative))
    if n_classes == 2:
        dirs[1] = -dirs[0]
    dirs *= (separation / 2) / np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = np.zeros((n_classes, n_features))
    centers[:, :informative] = dirs
    y = np.arange(n_samples) % n_classes
    rng.shuffle(y)
    X = centers[y] + rng.standard_normal((n_samples, n_features))
    n_test = int(round(n_samples * test_fraction))
    n_train = n_samples - n_test
    X = X.astype(DTYPE)
    return Dataset(X[:n_train], y[:n_train], X[n_train:], y[n_train:], n_classes)
