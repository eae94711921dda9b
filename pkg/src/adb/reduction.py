"""Per-split normalization and PCA reduction to a latent space."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError

PCA = "pca"
IDENTITY = "identity"


def _matrix(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError(f"{name} must be a non-empty 2-D matrix, got shape {x.shape}")
    return x


def zscore(x, name="matrix"):
    """Column z-score with this matrix's own statistics.

    Zero-variance columns become zeros and trigger a warning.
    Returns ``(z, mean, std)``.
    """
    x = _matrix(x, name)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flat = std == 0
    if np.any(flat):
        warnings.warn(f"{name}: {int(flat.sum())} constant column(s) mapped to zero", RuntimeWarning, stacklevel=2)
    safe = np.where(flat, 1.0, std)
    z = (x - mean) / safe
    z[:, flat] = 0.0
    return z, mean, std


def normalize_split(train, other):
    """Standardize ``train`` and ``other`` each with its own column statistics."""
    train = _matrix(train, "train")
    other = _matrix(other, "other")
    if train.shape[1] != other.shape[1]:
        raise InputError(f"column count mismatch: {train.shape[1]} vs {other.shape[1]}")
    return zscore(train, "train")[0], zscore(other, "other")[0]


@dataclass(frozen=True)
class ReductionModel:
    kind: str
    components: int
    mean: np.ndarray
    basis: np.ndarray  # (d, components), orthonormal columns
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_ratio(self) -> float:
        return float(self.explained_variance.sum() / self.total_variance) if self.total_variance else 1.0

    def transform(self, x):
        return apply_reduction(self, x)

    def inverse_transform(self, z):
        return np.asarray(z) @ self.basis.T + self.mean


def fit_reduction(train, components: int, kind: str = PCA) -> ReductionModel:
    """PCA by eigen-decomposition of the column-centered covariance of ``train``."""
    x = _matrix(train, "train")
    n, d = x.shape
    if kind == IDENTITY:
        var = x.var(axis=0)
        return ReductionModel(IDENTITY, d, np.zeros(d), np.eye(d), var, float(var.sum()))
    if kind != PCA:
        raise InputError(f"unknown reduction kind {kind!r}")
    if not 1 <= components <= min(n, d):
        raise InputError(f"components must be in 1..{min(n, d)}, got {components}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:components]
    basis = evecs[:, order]
    # Fix the sign of each axis so the projection is reproducible.
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(components)])
    basis = basis * np.where(flip == 0, 1.0, flip)
    evals = np.clip(evals, 0.0, None)
    return ReductionModel(PCA, components, mean, basis, evals[order], float(evals.sum()))


def apply_reduction(model: ReductionModel, x) -> np.ndarray:
    x = _matrix(x, "x")
    if x.shape[1] != model.basis.shape[0]:
        raise InputError(f"expected {model.basis.shape[0]} columns, got {x.shape[1]}")
    return (x - model.mean) @ model.basis
