"""Logistic-regression and softmax models: loss, gradient, batch Hessian."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# batch_hessian forms an n x n matrix; keep it a desk-scale diagnostic.
HESSIAN_FEATURE_CAP = 512


class Link(enum.Enum):
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"


@dataclass
class GlmModel:
    """Linear model theta (m x n) with a sigmoid or softmax link.

    Binary models use m = 1 and labels in {0, 1}; softmax models use one
    row per class.
    """

    theta: np.ndarray
    link: Link

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 2:
            raise ValueError(f"theta must be m x n, got shape {self.theta.shape}")
        if not np.isfinite(self.theta).all():
            raise ValueError("theta must be finite")

    @classmethod
    def binary(cls, n_features: int) -> "GlmModel":
        return cls(np.zeros((1, n_features)), Link.SIGMOID)

    @classmethod
    def softmax(cls, n_classes: int, n_features: int) -> "GlmModel":
        return cls(np.zeros((n_classes, n_features)), Link.SOFTMAX)

    @property
    def n_features(self) -> int:
        return self.theta.shape[1]


@dataclass
class Batch:
    """Feature rows with integer labels."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"batch shapes do not line up: x {self.x.shape}, y {self.y.shape}"
            )
        if self.x.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")

    @property
    def size(self) -> int:
        return self.x.shape[0]


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_labels(model: GlmModel, batch: Batch) -> np.ndarray:
    y = batch.y
    if not np.issubdtype(y.dtype, np.integer):
        y_int = y.astype(int)
        if not np.array_equal(y_int, y):
            raise ValueError("labels must be integers")
        y = y_int
    n_classes = 2 if model.link is Link.SIGMOID else model.theta.shape[0]
    if y.min(initial=0) < 0 or y.max(initial=0) >= n_classes:
        raise ValueError(
            f"labels out of range: expected 0..{n_classes - 1}, "
            f"got [{y.min()}, {y.max()}]"
        )
    return y


def _log_sum_exp(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    return (zmax + np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True)))[:, 0]


def loss(model: GlmModel, batch: Batch) -> float:
    """Mean cross-entropy over the batch.

    Per-sample terms use log-sum-exp; the reduction uses exactly rounded
    summation (math.fsum), so the value is independent of sample order.
    """
    y = _check_labels(model, batch)
    if model.link is Link.SIGMOID:
        z = batch.x @ model.theta[0]
        terms = np.logaddexp(0.0, z) - y * z
    else:
        z = batch.x @ model.theta.T
        terms = _log_sum_exp(z) - z[np.arange(batch.size), y]
    try:
        return math.fsum(terms.tolist()) / batch.size
    except (OverflowError, ValueError):
        # Terms are non-negative, so an exact-sum overflow means +inf.
        return math.inf


def gradient(model: GlmModel, batch: Batch) -> np.ndarray:
    """Mean cross-entropy gradient, an m x n matrix.

    Binary: (1/b) sum_i (sigma(theta^T x_i) - y_i) x_i.
    Softmax: (1/b) sum_i (p_i - onehot(y_i)) x_i^T.
    """
    y = _check_labels(model, batch)
    if model.link is Link.SIGMOID:
        z = batch.x @ model.theta[0]
        resid = sigmoid(z) - y
        return (resid @ batch.x)[None, :] / batch.size
    z = batch.x @ model.theta.T
    p = np.exp(z - _log_sum_exp(z)[:, None])
    p[np.arange(batch.size), y] -= 1.0
    return p.T @ batch.x / batch.size


def batch_hessian(model: GlmModel, batch: Batch) -> np.ndarray:
    """Cross-entropy Hessian H = (1/b) X^T diag(p (1 - p)) X, binary only.

    Diagnostic: forms an n x n matrix and is capped at desk scale; it is
    never called from an optimizer step.
    """
    if model.link is not Link.SIGMOID:
        raise ValueError("batch_hessian supports binary models only")
    n = model.n_features
    if n > HESSIAN_FEATURE_CAP:
        raise ValueError(
            f"batch_hessian capped at {HESSIAN_FEATURE_CAP} features, got {n}"
        )
    _check_labels(model, batch)
    p = sigmoid(batch.x @ model.theta[0])
    weights = p * (1.0 - p)
    return (batch.x * weights[:, None]).T @ batch.x / batch.size


def predict(model: GlmModel, x: np.ndarray) -> np.ndarray:
    """Predicted class indices."""
    if model.link is Link.SIGMOID:
        return (x @ model.theta[0] >= 0.0).astype(int)
    return np.argmax(x @ model.theta.T, axis=1)


def accuracy(model: GlmModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(model, x) == y))


def add_bias_column(x: np.ndarray) -> np.ndarray:
    """Append a constant-1 feature column."""
    return np.hstack([x, np.ones((x.shape[0], 1))])
