"""Shared feature space for selection strategies.

Feature matrices are plain (N, D) float64 arrays. PCA is computed by SVD of
the centered matrix; axes carry a deterministic sign convention (first
nonzero component positive) so downstream selections are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import GriddedDataset


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class PcaModel:
    """Centering vector plus orthonormal principal axes (rows, m x D)."""

    center: np.ndarray
    axes: np.ndarray
    explained_variance: np.ndarray


def flatten_samples(ds: GriddedDataset, times) -> np.ndarray:
    """Row per time index: variable-major concatenation of grid values."""
    times = np.asarray(times, dtype=np.int64)
    if times.size == 0:
        raise FeatureError("empty time index list")
    n = times.size
    return ds.data[times].reshape(n, -1).astype(np.float64)


def _fix_signs(axes: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    out = axes.copy()
    for i, row in enumerate(out):
        nz = np.nonzero(np.abs(row) > tol)[0]
        if nz.size and row[nz[0]] < 0:
            out[i] = -row
    return out


def numerical_rank(x: np.ndarray) -> int:
    """Rank of the centered matrix, with SVD-scale tolerance."""
    xc = x - x.mean(axis=0)
    s = np.linalg.svd(xc, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > s[0] * max(xc.shape) * np.finfo(np.float64).eps * 10))


def pca_fit(x: np.ndarray, m: int) -> PcaModel:
    """Top-m principal axes of x via SVD of the centered matrix.

    Errors when m exceeds the numerical rank rather than padding with
    arbitrary axes.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 1 <= m <= min(n, d):
        raise FeatureError(f"m={m} out of range for shape {(n, d)}")
    center = x.mean(axis=0)
    xc = x - center
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    rank = int(np.sum(s > (s[0] * max(n, d) * np.finfo(np.float64).eps * 10 if s.size else 0)))
    if m > rank:
        raise FeatureError(f"requested m={m} exceeds numerical rank {rank}")
    axes = _fix_signs(vt[:m])
    explained = (s[:m] ** 2) / n
    return PcaModel(center=center, axes=axes, explained_variance=explained)


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.center.size:
        raise FeatureError(
            f"feature dim {x.shape[1]} does not match model dim {model.center.size}"
        )
    return (x - model.center) @ model.axes.T


def default_pca_dims(n: int, d: int) -> int:
    return min(64, n, d)


def spatial_mean_vector(
    ds: GriddedDataset, t: int, weights: np.ndarray | None = None
) -> np.ndarray:
    """Per-variable (area-weighted) spatial mean at one time index."""
    fields = ds.data[t].astype(np.float64)
    if weights is None:
        return fields.mean(axis=(1, 2))
    w = np.asarray(weights, dtype=np.float64)
    return (fields * w).sum(axis=(1, 2)) / w.sum()


def spatial_mean_matrix(
    ds: GriddedDataset, times, weights: np.ndarray | None = None
) -> np.ndarray:
    """Stacked spatial_mean_vector rows for a list of time indices."""
    times = np.asarray(times, dtype=np.int64)
    fields = ds.data[times].astype(np.float64)
    if weights is None:
        return fields.mean(axis=(2, 3))
    w = np.asarray(weights, dtype=np.float64)
    return (fields * w).sum(axis=(2, 3)) / w.sum()


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise FeatureError("cosine distance undefined for zero vectors")
    return float(1.0 - (a @ b) / (na * nb))
