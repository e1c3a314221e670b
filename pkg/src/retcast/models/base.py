from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Design:
    """Feature matrix and targets for one subsample."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float)
        if X.shape[0] == 0:
            raise ModelError("empty design")
        if X.shape[0] != y.shape[0]:
            raise ModelError("X and y row counts differ")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        mu = X.mean(0)
        sd = X.std(0)
        sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
        return cls(mu, sd)

    @classmethod
    def identity(cls, p):
        return cls(np.zeros(p), np.ones(p))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Common surface: ``predict``, ``complexity`` and the hyperparameters used."""

    kind: str
    hyperparams: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    @property
    def complexity(self) -> float:
        raise NotImplementedError

    def _check_width(self, X, p):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != p:
            raise ModelError(f"expected {p} columns, got {X.shape[1]}")
        return X


def mse(y, yhat) -> float:
    d = np.asarray(y) - np.asarray(yhat)
    return float(np.mean(d * d))
