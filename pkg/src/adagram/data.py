"""Synthetic correlated datasets and LIBSVM-format ingestion.

Synthetic generation draws rows with a prescribed feature correlation
matrix (isotropic, tridiagonal, or Toeplitz rho^|i-j|) and Bernoulli
labels from a ground-truth logistic model.  Real datasets are read from
the sparse LIBSVM text format ("label index:value ...").
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .glm import sigmoid

# Features whose train-split standard deviation falls below this are left
# unscaled (mean is still removed).
_CONST_FEATURE_TOL = 1e-12


class DataError(ValueError):
    """Generation or parsing failure."""


class CorrelationKind(enum.Enum):
    ISOTROPIC = "isotropic"
    TRIDIAGONAL = "tridiagonal"
    DENSE = "dense"


@dataclass
class CorrelationSpec:
    kind: CorrelationKind
    n_features: int
    rho: float | None = None

    def __post_init__(self) -> None:
        self.kind = CorrelationKind(self.kind)
        if self.n_features < 1:
            raise DataError(f"n_features must be >= 1, got {self.n_features}")
        if self.kind is not CorrelationKind.ISOTROPIC and self.rho is None:
            # Tridiagonal stays positive definite for all n at |rho| < 0.5;
            # 0.95 is the highly-correlated Toeplitz default.
            self.rho = 0.45 if self.kind is CorrelationKind.TRIDIAGONAL else 0.95

    def matrix(self) -> np.ndarray:
        n = self.n_features
        if self.kind is CorrelationKind.ISOTROPIC:
            return np.eye(n)
        if self.kind is CorrelationKind.TRIDIAGONAL:
            m = np.eye(n)
            off = np.full(n - 1, self.rho)
            m += np.diag(off, 1) + np.diag(off, -1)
            return m
        idx = np.arange(n)
        return self.rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass
class SyntheticSpec:
    corr: CorrelationSpec
    n_samples: int = 2000
    theta_star: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise DataError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.theta_star is not None:
            self.theta_star = np.asarray(self.theta_star, dtype=float)
            if self.theta_star.shape != (self.corr.n_features,):
                raise DataError(
                    f"theta_star has shape {self.theta_star.shape}, "
                    f"expected ({self.corr.n_features},)"
                )


@dataclass
class Dataset:
    """Dense features, integer labels, and the standardization record."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    name: str = ""
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise DataError(
                f"dataset shapes do not line up: x {self.x.shape}, y {self.y.shape}"
            )
        if not np.isfinite(self.x).all():
            raise DataError(f"dataset {self.name!r} contains non-finite features")

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw X = Z C^T with C C^T the requested correlation matrix.

    Labels are Bernoulli(sigma(x . theta_star)).  When theta_star is not
    given it is drawn first from the same seeded generator and scaled to
    norm 3 (informative but not separable).
    """
    sigma_mat = spec.corr.matrix()
    min_eig = float(np.linalg.eigvalsh(sigma_mat).min())
    if min_eig <= 1e-8:
        raise DataError(
            f"correlation matrix for {spec.corr.kind.value} "
            f"(rho={spec.corr.rho}, n={spec.corr.n_features}) is not positive "
            f"definite: min eigenvalue {min_eig:.3e}"
        )
    rng = np.random.default_rng(spec.seed)
    theta = spec.theta_star
    if theta is None:
        theta = rng.standard_normal(spec.corr.n_features)
        theta *= 3.0 / np.linalg.norm(theta)
    chol = np.linalg.cholesky(sigma_mat)
    z = rng.standard_normal((spec.n_samples, spec.corr.n_features))
    x = z @ chol.T
    y = (rng.random(spec.n_samples) < sigmoid(x @ theta)).astype(int)
    return Dataset(x, y, n_classes=2, name=f"synthetic:{spec.corr.kind.value}")


def parse_libsvm(source, name: str = "") -> Dataset:
    """Parse LIBSVM text ("label index:value ...", 1-based indices).

    Missing indices are zero; the maximum index defines the feature count.
    Labels are remapped to 0..K-1 by sorted order, so binary files using
    {-1,+1} or {1,2} land on {0,1}.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    rows: list[dict[int, float]] = []
    labels: list[float] = []
    n_features = 0
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise DataError(f"line {lineno}: bad label {tokens[0]!r}") from None
        entries: dict[int, float] = {}
        prev_idx = 0
        for tok in tokens[1:]:
            idx_str, _, val_str = tok.partition(":")
            try:
                idx = int(idx_str)
                val = float(val_str)
            except ValueError:
                raise DataError(f"line {lineno}: bad feature token {tok!r}") from None
            if idx <= prev_idx:
                raise DataError(
                    f"line {lineno}: indices must be increasing and >= 1, got {idx}"
                )
            prev_idx = idx
            entries[idx] = val
        n_features = max(n_features, prev_idx)
        rows.append(entries)
    if not rows:
        raise DataError("empty LIBSVM input")

    classes = sorted(set(labels))
    class_of = {c: i for i, c in enumerate(classes)}
    x = np.zeros((len(rows), n_features))
    for i, entries in enumerate(rows):
        for idx, val in entries.items():
            x[i, idx - 1] = val
    y = np.array([class_of[c] for c in labels], dtype=int)
    return Dataset(x, y, n_classes=len(classes), name=name)


def serialize_libsvm(ds: Dataset) -> str:
    """Inverse of :func:`parse_libsvm` (sparse text, zeros omitted).

    If the last feature column is entirely zero an explicit "n:0" entry is
    emitted on the first line so the feature count survives a round trip.
    """
    lines = []
    max_emitted = 0
    for i in range(ds.n_samples):
        parts = [str(int(ds.y[i]))]
        for j in range(ds.n_features):
            v = float(ds.x[i, j])
            if v != 0.0:
                parts.append(f"{j + 1}:{v!r}")
                max_emitted = max(max_emitted, j + 1)
        lines.append(" ".join(parts))
    if max_emitted < ds.n_features and lines:
        lines[0] += f" {ds.n_features}:0.0"
    return "\n".join(lines) + "\n"


def load_libsvm(path: str) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        return parse_libsvm(fh, name=path)


def save_libsvm(ds: Dataset, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(serialize_libsvm(ds))


def split_standardize(ds: Dataset, test_fraction: float,
                      seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle and split; standardization is fit on train only.

    The test size is floor(n_samples * test_fraction).  Each non-constant
    feature is centered and scaled to unit standard deviation (population
    std); constant features are centered but not scaled.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n_samples)
    n_test = math.floor(ds.n_samples * test_fraction)
    if n_test < 1 or ds.n_samples - n_test < 1:
        raise DataError(
            f"split leaves an empty side: {ds.n_samples} samples, "
            f"test_fraction {test_fraction}"
        )
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    means = ds.x[train_idx].mean(axis=0)
    stds = ds.x[train_idx].std(axis=0)
    scale = np.where(stds > _CONST_FEATURE_TOL, stds, 1.0)

    def build(idx, suffix):
        return Dataset(
            (ds.x[idx] - means) / scale,
            ds.y[idx],
            n_classes=ds.n_classes,
            name=f"{ds.name}/{suffix}" if ds.name else suffix,
            feature_means=means.copy(),
            feature_stds=stds.copy(),
        )

    return build(train_idx, "train"), build(test_idx, "test")
