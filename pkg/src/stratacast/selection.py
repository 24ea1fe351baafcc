"""Data-subset selection strategies behind one common interface.

Every strategy has the signature
``select_<name>(ds, candidate_times, budget, seed, **kw) -> SubsetSelection``
and returns exactly ``budget.target_count(len(candidates))`` unique candidate
indices, reproducibly for a fixed seed. Ties break to the lowest candidate
index everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .dataset import GriddedDataset
from .features import (
    default_pca_dims,
    flatten_samples,
    numerical_rank,
    pca_fit,
    pca_transform,
    spatial_mean_matrix,
)


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionBudget:
    fraction: float

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise SelectionError("budget fraction must lie in (0, 1]")

    def target_count(self, n: int) -> int:
        # round half up, deterministically
        k = int(math.floor(self.fraction * n + 0.5))
        if k < 1:
            raise SelectionError(f"budget of {self.fraction} on {n} candidates selects nothing")
        return k


@dataclass
class SubsetSelection:
    strategy: str
    indices: list[int]
    fraction: float
    seed: int
    metadata: dict = dc_field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "strategy": self.strategy,
            "seed": self.seed,
            "fraction": self.fraction,
            "indices": [int(i) for i in self.indices],
        }
        if self.metadata:
            payload["metadata"] = self.metadata
        return json.dumps(payload, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "SubsetSelection":
        d = json.loads(Path(path).read_text())
        return cls(
            strategy=d["strategy"],
            indices=[int(i) for i in d["indices"]],
            fraction=float(d["fraction"]),
            seed=int(d["seed"]),
            metadata=d.get("metadata", {}),
        )


def _check_candidates(candidates, budget: SelectionBudget) -> tuple[np.ndarray, int]:
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size == 0:
        raise SelectionError("no candidate times")
    k = budget.target_count(cand.size)
    if k > cand.size:
        raise SelectionError(f"budget {k} exceeds {cand.size} candidates")
    return cand, k


# ---------------------------------------------------------------------------
# Quota allocation for stratified variants
# ---------------------------------------------------------------------------

def allocate_quotas(target: int, bin_sizes: list[int]) -> list[int]:
    """Largest-remainder allocation of equal shares across bins.

    Ideal share is target / n_bins for every bin; leftover units go to the
    earliest bins (January-first for month bins). Quotas larger than a bin are
    capped and the deficit redistributed round-robin over bins with spare
    capacity; raises when total capacity is short.
    """
    n_bins = len(bin_sizes)
    ideal = target / n_bins
    quotas = [int(math.floor(ideal))] * n_bins
    remainder = target - sum(quotas)
    # equal fractional remainders: ties resolved earliest-bin-first
    for b in range(remainder):
        quotas[b] += 1

    quotas = [min(q, s) for q, s in zip(quotas, bin_sizes)]
    deficit = target - sum(quotas)
    while deficit > 0:
        progressed = False
        for b in range(n_bins):
            if deficit == 0:
                break
            if quotas[b] < bin_sizes[b]:
                quotas[b] += 1
                deficit -= 1
                progressed = True
        if not progressed:
            raise SelectionError("bins cannot absorb the requested budget")
    return quotas


def _month_bins(ds: GriddedDataset, cand: np.ndarray) -> list[np.ndarray]:
    months = ds.months()[cand]
    return [cand[months == m] for m in range(1, 13)]


# ---------------------------------------------------------------------------
# Shared feature-space helpers
# ---------------------------------------------------------------------------

def pca_features(ds: GriddedDataset, cand: np.ndarray) -> np.ndarray:
    """Flatten candidates and project to the default PCA space.

    The PCA dimension is clamped to the numerical rank of the flattened
    matrix (low-noise synthetic data is routinely rank-deficient).
    """
    x = flatten_samples(ds, cand)
    rank = numerical_rank(x)
    if rank == 0:
        return np.zeros((x.shape[0], 1))
    m = min(default_pca_dims(*x.shape), rank)
    model = pca_fit(x, m)
    return pca_transform(model, x)


# ---------------------------------------------------------------------------
# k-means core (shared by the coreset strategies)
# ---------------------------------------------------------------------------

def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))
    return centers


def kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    init: str = "kmeans++",
    max_iter: int = 100,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm; returns (centers, assignment).

    Empty clusters are reseeded from the point farthest from its assigned
    centroid.
    """
    n = x.shape[0]
    if k > n:
        raise SelectionError(f"k={k} exceeds {n} points")
    if init == "kmeans++":
        centers = _kmeanspp_init(x, k, rng)
    elif init == "random":
        centers = x[rng.choice(n, size=k, replace=False)].copy()
    else:
        raise SelectionError(f"unknown init {init!r}")

    x_sq = np.sum(x * x, axis=1)

    def _dist2(cent):
        # ||x||^2 - 2 x.c + ||c||^2, clipped against rounding
        d = x_sq[:, None] - 2.0 * (x @ cent.T) + np.sum(cent * cent, axis=1)[None, :]
        return np.maximum(d, 0.0)

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _dist2(centers)
        assign = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        point_d2 = d2[np.arange(n), assign]
        for c in range(k):
            mask = assign == c
            if mask.any():
                new_centers[c] = x[mask].mean(axis=0)
            else:
                far = int(np.argmax(point_d2))
                new_centers[c] = x[far]
                point_d2[far] = 0.0
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift < tol:
            break
    assign = np.argmin(_dist2(centers), axis=1)
    return centers, assign


def nearest_to_centroids(
    x: np.ndarray, centers: np.ndarray, assign: np.ndarray
) -> list[int]:
    """Row index of each cluster's member closest to its centroid (ties: lowest)."""
    out = []
    for c in range(centers.shape[0]):
        members = np.nonzero(assign == c)[0]
        if members.size == 0:
            continue
        d = np.linalg.norm(x[members] - centers[c], axis=1)
        out.append(int(members[np.argmin(d)]))  # argmin takes the first = lowest index
    return out


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------

def select_full(ds, candidate_times, budget=None, seed: int = 0) -> SubsetSelection:
    cand = np.asarray(candidate_times, dtype=np.int64)
    if cand.size == 0:
        raise SelectionError("no candidate times")
    return SubsetSelection("full", [int(i) for i in cand], 1.0, seed)


def select_random(ds, candidate_times, budget, seed: int) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    if k == cand.size:
        chosen = cand
    else:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(cand, size=k, replace=False)
    return SubsetSelection("random", [int(i) for i in chosen], budget.fraction, seed)


def _stratified_draw(
    bins: list[np.ndarray], quotas: list[int], rng: np.random.Generator
) -> list[int]:
    chosen = []
    for b, quota in zip(bins, quotas):
        if quota == 0:
            continue
        if quota == b.size:
            chosen.extend(int(i) for i in b)
        else:
            chosen.extend(int(i) for i in rng.choice(b, size=quota, replace=False))
    return chosen


def select_stratified_time(ds, candidate_times, budget, seed: int) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    bins = _month_bins(ds, cand)
    quotas = allocate_quotas(k, [b.size for b in bins])
    rng = np.random.default_rng(seed)
    chosen = _stratified_draw(bins, quotas, rng)
    return SubsetSelection("stratified_time", chosen, budget.fraction, seed)


def select_kmeans_coreset(ds, candidate_times, budget, seed: int) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    feats = pca_features(ds, cand)
    rng = np.random.default_rng(seed)
    centers, assign = kmeans(feats, k, rng, init="kmeans++")
    rows = nearest_to_centroids(feats, centers, assign)
    chosen = [int(cand[r]) for r in rows]
    if len(chosen) != k:
        raise SelectionError("k-means produced fewer representatives than clusters")
    return SubsetSelection("kmeans", chosen, budget.fraction, seed)


def greedy_max_min(
    feats: np.ndarray, k: int, first: int, dist_to_selected_init: np.ndarray
) -> list[int]:
    """Max-min greedy over rows of feats, starting from ``first``.

    ``dist_to_selected_init`` is the distance of every row to ``first``.
    Ties break to the lowest row index (argmax takes the first maximum).
    """
    selected = [first]
    min_d = dist_to_selected_init.copy()
    min_d[first] = -np.inf
    for _ in range(1, k):
        nxt = int(np.argmax(min_d))
        selected.append(nxt)
        d_new = np.linalg.norm(feats - feats[nxt], axis=1)
        min_d = np.minimum(min_d, d_new)
        min_d[nxt] = -np.inf
    return selected


def select_greedy_diverse(
    ds, candidate_times, budget, seed: int, weights: np.ndarray | None = None
) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    feats = spatial_mean_matrix(ds, cand, weights)
    center = feats.mean(axis=0)
    d_center = np.linalg.norm(feats - center, axis=1)
    first = int(np.argmax(d_center))
    rows = greedy_max_min(feats, k, first, np.linalg.norm(feats - feats[first], axis=1))
    chosen = [int(cand[r]) for r in rows]
    return SubsetSelection("greedy_diverse", chosen, budget.fraction, seed)


def herding_order(feats: np.ndarray, k: int) -> list[int]:
    """Linear-kernel herding without replacement; returns row indices in pick order."""
    mu = feats.mean(axis=0)
    w = mu.copy()
    selected: list[int] = []
    available = np.ones(feats.shape[0], dtype=bool)
    for _ in range(k):
        scores = feats @ w
        scores[~available] = -np.inf
        pick = int(np.argmax(scores))
        selected.append(pick)
        available[pick] = False
        w = w + mu - feats[pick]
    return selected


def select_herding(ds, candidate_times, budget, seed: int) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    feats = pca_features(ds, cand)
    rows = herding_order(feats, k)
    chosen = [int(cand[r]) for r in rows]
    return SubsetSelection("herding", chosen, budget.fraction, seed)


def quantile_bins(scores: np.ndarray, n_bins: int = 12) -> np.ndarray:
    """Bin index per score using quantile edges; degenerate scores share bin 0."""
    edges = np.quantile(scores, [i / n_bins for i in range(1, n_bins)])
    return np.searchsorted(edges, scores, side="right")


def select_spatial_stratified(
    ds, candidate_times, budget, seed: int, weights: np.ndarray | None = None
) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    feats = spatial_mean_matrix(ds, cand, weights)
    if numerical_rank(feats) == 0:
        scores = np.zeros(cand.size)
    else:
        model = pca_fit(feats, 1)
        scores = pca_transform(model, feats)[:, 0]
    bin_of = quantile_bins(scores, 12)
    bins = [cand[bin_of == b] for b in range(12)]
    quotas = allocate_quotas(k, [b.size for b in bins])
    rng = np.random.default_rng(seed)
    chosen = _stratified_draw(bins, quotas, rng)
    return SubsetSelection("spatial", chosen, budget.fraction, seed)


def _stratified_kmeans(
    ds, candidate_times, budget, seed: int, init: str, name: str,
    weights: np.ndarray | None = None,
) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    bins = _month_bins(ds, cand)
    quotas = allocate_quotas(k, [b.size for b in bins])
    chosen: list[int] = []
    for m, (b, quota) in enumerate(zip(bins, quotas)):
        if quota == 0:
            continue
        if quota == b.size:
            chosen.extend(int(i) for i in b)
            continue
        feats = spatial_mean_matrix(ds, b, weights)
        rng = np.random.default_rng([seed, m])
        centers, assign = kmeans(feats, quota, rng, init=init)
        rows = nearest_to_centroids(feats, centers, assign)
        chosen.extend(int(b[r]) for r in rows)
    return SubsetSelection(name, chosen, budget.fraction, seed)


def select_stratified_kmeans(ds, candidate_times, budget, seed, weights=None):
    return _stratified_kmeans(
        ds, candidate_times, budget, seed, "random", "stratified_kmeans", weights
    )


def select_stratified_kmeanspp(ds, candidate_times, budget, seed, weights=None):
    return _stratified_kmeans(
        ds, candidate_times, budget, seed, "kmeans++", "stratified_kmeanspp", weights
    )


def persistence_difficulty_scores(ds: GriddedDataset, cand: np.ndarray) -> np.ndarray:
    """||x_{t+24h} - x_t||_2 per candidate; -inf where t+24h has no successor."""
    stride = ds.stride_hours
    off = 24.0 / stride
    if abs(off - round(off)) > 1e-9:
        raise SelectionError("dataset stride does not divide 24 hours")
    off = int(round(off))
    scores = np.full(cand.size, -np.inf)
    ok = cand + off < ds.n_times
    if ok.any():
        cur = ds.data[cand[ok]].astype(np.float64)
        nxt = ds.data[cand[ok] + off].astype(np.float64)
        scores[ok] = np.sqrt(np.sum((nxt - cur) ** 2, axis=(1, 2, 3)))
    return scores


def select_stratified_entropy(ds, candidate_times, budget, seed: int) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    scores = persistence_difficulty_scores(ds, cand)
    bins = _month_bins(ds, cand)
    quotas = allocate_quotas(k, [b.size for b in bins])
    pos_of = {int(c): i for i, c in enumerate(cand)}
    chosen: list[int] = []
    for b, quota in zip(bins, quotas):
        if quota == 0:
            continue
        rows = sorted(range(b.size), key=lambda r: (-scores[pos_of[int(b[r])]], int(b[r])))
        chosen.extend(int(b[r]) for r in rows[:quota])
    return SubsetSelection("stratified_entropy", chosen, budget.fraction, seed)


def greedy_cosine_order(feats: np.ndarray, k: int) -> list[int]:
    """Greedy max-min under cosine distance, starting from row 0."""
    norms = np.linalg.norm(feats, axis=1)
    unit = feats / norms[:, None]

    def cos_d(i):
        return 1.0 - unit @ unit[i]

    selected = [0]
    min_d = cos_d(0)
    min_d[0] = -np.inf
    for _ in range(1, k):
        nxt = int(np.argmax(min_d))
        selected.append(nxt)
        min_d = np.minimum(min_d, cos_d(nxt))
        min_d[nxt] = -np.inf
    return selected


def select_stratified_spatial_diversity(
    ds, candidate_times, budget, seed: int, weights: np.ndarray | None = None
) -> SubsetSelection:
    cand, k = _check_candidates(candidate_times, budget)
    bins = _month_bins(ds, cand)
    quotas = allocate_quotas(k, [b.size for b in bins])
    chosen: list[int] = []
    excluded_zero: list[int] = []
    for b, quota in zip(bins, quotas):
        if quota == 0:
            continue
        feats = spatial_mean_matrix(ds, b, weights)
        norms = np.linalg.norm(feats, axis=1)
        zero = norms == 0.0
        excluded_zero.extend(int(i) for i in b[zero])
        usable = b[~zero]
        ufeats = feats[~zero]
        if quota >= usable.size:
            picked = [int(i) for i in usable]
        else:
            rows = greedy_cosine_order(ufeats, quota)
            picked = [int(usable[r]) for r in rows]
        if len(picked) < quota:
            # zero-vector exclusion left the month short: fill by lowest index
            fill = sorted(int(i) for i in b[zero])[: quota - len(picked)]
            picked.extend(fill)
        chosen.extend(picked)
    meta = {}
    if excluded_zero:
        meta["zero_vector_candidates"] = sorted(excluded_zero)
    return SubsetSelection(
        "stratified_spatial_diversity", chosen, budget.fraction, seed, metadata=meta
    )


STRATEGIES = {
    "full": select_full,
    "random": select_random,
    "stratified_time": select_stratified_time,
    "kmeans": select_kmeans_coreset,
    "greedy_diverse": select_greedy_diverse,
    "herding": select_herding,
    "spatial": select_spatial_stratified,
    "stratified_kmeans": select_stratified_kmeans,
    "stratified_kmeanspp": select_stratified_kmeanspp,
    "stratified_entropy": select_stratified_entropy,
    "stratified_spatial_diversity": select_stratified_spatial_diversity,
}


def run_strategy(
    name: str, ds, candidate_times, budget: SelectionBudget, seed: int
) -> SubsetSelection:
    if name not in STRATEGIES:
        raise SelectionError(f"unknown strategy {name!r}")
    if name == "full":
        return select_full(ds, candidate_times, seed=seed)
    return STRATEGIES[name](ds, candidate_times, budget, seed)
