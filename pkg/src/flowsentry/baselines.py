"""Gaussian naive Bayes, brute-force KNN and a Pegasos linear SVM.

Every model returns hard labels and a score in [0, 1] for ROC analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Rng64
from .nn import sigmoid

VAR_FLOOR = 1e-9


class SingleClassTraining(ValueError):
    pass


def _check_two_classes(y: np.ndarray) -> None:
    if len(np.unique(y)) < 2:
        raise SingleClassTraining("training labels contain a single class")


@dataclass
class GaussianNbModel:
    priors: np.ndarray  # (2,)
    means: np.ndarray  # (2, d)
    variances: np.ndarray  # (2, d)

    def to_dict(self) -> dict:
        return {"priors": self.priors.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianNbModel":
        return cls(np.asarray(d["priors"]), np.asarray(d["means"]), np.asarray(d["variances"]))


def nb_fit(x, y) -> GaussianNbModel:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int)
    _check_two_classes(y)
    priors = np.array([np.mean(y == c) for c in (0, 1)])
    means = np.stack([x[y == c].mean(axis=0) for c in (0, 1)])
    var = np.stack([x[y == c].var(axis=0) for c in (0, 1)])
    return GaussianNbModel(priors, means, np.maximum(var, VAR_FLOOR))


def nb_log_joint(model: GaussianNbModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty((x.shape[0], 2))
    for c in (0, 1):
        var = model.variances[c]
        ll = -0.5 * (np.log(2.0 * np.pi * var) + (x - model.means[c]) ** 2 / var)
        out[:, c] = np.log(model.priors[c]) + ll.sum(axis=1)
    return out


def nb_predict(model: GaussianNbModel, x) -> tuple[np.ndarray, np.ndarray]:
    lj = nb_log_joint(model, x)
    # posterior of class 1 = sigmoid(log-odds)
    score = sigmoid(lj[:, 1] - lj[:, 0])
    return (lj[:, 1] > lj[:, 0]).astype(int), score


@dataclass
class KnnModel:
    x: np.ndarray
    y: np.ndarray
    k: int = 5

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y).astype(int)
        if self.k % 2 == 0 or not 1 <= self.k <= len(self.y):
            raise ValueError(f"k must be odd and in [1, {len(self.y)}], got {self.k}")

    def to_dict(self) -> dict:
        return {"k": self.k, "x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(np.asarray(d["x"]), np.asarray(d["y"]), int(d["k"]))


def knn_fit(x, y, k: int = 5) -> KnnModel:
    return KnnModel(x, y, k)


def knn_neighbors(model: KnnModel, x) -> np.ndarray:
    """Indices of the k nearest training rows; equal distances keep training order."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d2 = ((x[:, None, :] - model.x[None, :, :]) ** 2).sum(axis=2)
    return np.argsort(d2, axis=1, kind="stable")[:, :model.k]


def knn_predict(model: KnnModel, x, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    scores = np.empty(x.shape[0])
    for s in range(0, x.shape[0], chunk):
        nb = knn_neighbors(model, x[s:s + chunk])
        scores[s:s + chunk] = model.y[nb].mean(axis=1)
    return (scores > 0.5).astype(int), scores


@dataclass
class LinearSvmModel:
    w: np.ndarray
    b: float
    lam: float

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "b": self.b, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSvmModel":
        return cls(np.asarray(d["w"], dtype=float), float(d["b"]), float(d["lambda"]))


def svm_fit(x, y, lam: float = 1e-4, epochs: int = 50, rng: Rng64 | None = None) -> LinearSvmModel:
    """Pegasos SGD on the primal hinge loss with an unregularized bias.

    Step size 1/(lam t); after each step w is projected onto the ball of
    radius 1/sqrt(lam). Sample order is reshuffled from ``rng`` every epoch.
    """
    x = np.asarray(x, dtype=float)
    y01 = np.asarray(y).astype(int)
    _check_two_classes(y01)
    ys = np.where(y01 == 1, 1.0, -1.0)
    rng = rng if rng is not None else Rng64(22)
    w = np.zeros(x.shape[1])
    b = 0.0
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(ys)):
            t += 1
            eta = 1.0 / (lam * t)
            margin = ys[i] * (x[i] @ w + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * ys[i] * x[i]
                b += eta * ys[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
    return LinearSvmModel(w, b, lam)


def svm_decision(model: LinearSvmModel, x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float)) @ model.w + model.b


def svm_predict(model: LinearSvmModel, x) -> tuple[np.ndarray, np.ndarray]:
    d = svm_decision(model, x)
    return (d >= 0).astype(int), sigmoid(d)
