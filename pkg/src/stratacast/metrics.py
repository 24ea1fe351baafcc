"""Probabilistic forecast verification: RMSE, fair ensemble CRPS, SSR.

All field metrics accept area weights normalized to mean 1 (cos-latitude on
real grids, uniform on flat synthetic grids). The CRPS estimator is the fair
(unbiased) ensemble form with the 1/(2M(M-1)) pairwise term; SSR carries the
sqrt((M+1)/M) finite-ensemble correction.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta
from typing import Iterable

import numpy as np

from .dataset import GriddedDataset, GridSpec


class MetricError(ValueError):
    pass


COS_FLOOR = 1e-6


def area_weights(grid: GridSpec, flat: bool = False) -> np.ndarray:
    """[lat, lon] weights, cos(latitude) normalized to mean 1; all ones when flat."""
    if flat:
        return np.ones((grid.n_lat, grid.n_lon))
    cos = np.maximum(np.cos(np.deg2rad(grid.lats)), COS_FLOOR)
    w_lat = cos / cos.mean()
    return np.repeat(w_lat[:, None], grid.n_lon, axis=1)


def rmse(ens_mean: np.ndarray, truth: np.ndarray, w: np.ndarray) -> float:
    """sqrt of the weighted mean squared error over cases and grid cells."""
    ens_mean = np.asarray(ens_mean, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if ens_mean.shape != truth.shape:
        raise MetricError(f"shape mismatch {ens_mean.shape} vs {truth.shape}")
    err2 = (ens_mean - truth) ** 2
    return float(np.sqrt(np.mean(err2 * w)))


def crps_ensemble(members: np.ndarray, y) -> np.ndarray:
    """Pointwise fair CRPS.

    ``members`` has the ensemble on axis 0; ``y`` matches the remaining axes.
    For M = 1 the pairwise term is 0 and the score reduces to |x1 - y|.
    """
    members = np.asarray(members, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = members.shape[0]
    if m < 1:
        raise MetricError("need at least one ensemble member")
    term1 = np.mean(np.abs(members - y), axis=0)
    if m == 1:
        return term1
    pair = np.zeros_like(term1)
    for i in range(m):
        for j in range(i + 1, m):
            pair += np.abs(members[i] - members[j])
    return term1 - pair / (m * (m - 1))


def ssr(members: np.ndarray, truth: np.ndarray, w: np.ndarray) -> float:
    """Spread/skill ratio with the sqrt((M+1)/M) correction.

    ``members``: [M, case, lat, lon]; ``truth``: [case, lat, lon].
    """
    members = np.asarray(members, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    m = members.shape[0]
    if m < 2:
        raise MetricError("SSR requires at least 2 ensemble members")
    spread2 = float(np.mean(members.var(axis=0, ddof=1) * w))
    skill = rmse(members.mean(axis=0), truth, w)
    if skill == 0.0:
        raise MetricError("SSR undefined for zero forecast error")
    return float(np.sqrt((m + 1) / m) * np.sqrt(spread2) / skill)


def ensemble_spread(members: np.ndarray, w: np.ndarray) -> float:
    """Weighted-mean unbiased ensemble spread (the SSR numerator before correction)."""
    members = np.asarray(members, dtype=np.float64)
    return float(np.sqrt(np.mean(members.var(axis=0, ddof=1) * w)))


@dataclass
class MetricRecord:
    """One row of the report: (method, variable, lead) -> scores."""

    method: str
    variable: str
    lead_days: int
    crps: float
    rmse: float
    ssr: float
    seed: int | None = None

    def __post_init__(self):
        if not 1 <= self.lead_days <= 10:
            raise MetricError(f"lead_days {self.lead_days} outside 1..10")
        for name in ("crps", "rmse", "ssr"):
            if not np.isfinite(getattr(self, name)):
                raise MetricError(f"non-finite {name} for {self.method}/{self.variable}")


CSV_HEADER = "method,variable,lead_days,crps,rmse,ssr"


def records_to_csv(records: Iterable[MetricRecord]) -> str:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.method},{r.variable},{r.lead_days},{r.crps:.6g},{r.rmse:.6g},{r.ssr:.6g}"
        )
    return "\n".join(lines) + "\n"


def evaluate_forecast(
    forecast,
    truth: GriddedDataset,
    leads_days=(5, 10),
    w: np.ndarray | None = None,
    method: str = "",
    seed: int | None = None,
) -> list[MetricRecord]:
    """One MetricRecord per (variable, lead).

    CRPS is the weighted mean of pointwise fair CRPS over all cases and grid
    cells. Degenerate cases (deterministic ensemble or zero error) record
    ssr = 0.0 instead of raising.
    """
    if w is None:
        w = np.ones((truth.grid.n_lat, truth.grid.n_lon))
    records = []
    for lead in leads_days:
        lead_hours = lead * 24
        step = int(round(lead_hours / forecast.lead_stride_hours)) - 1
        if not 0 <= step < forecast.n_steps:
            raise MetricError(f"lead {lead}d not covered by {forecast.n_steps} steps")
        truth_idx = []
        for ti in forecast.init_indices:
            target = truth.timestamps[ti] + timedelta(hours=lead_hours)
            truth_idx.append(truth.time_index(target))
        for v, name in enumerate(truth.variables):
            # members: [M, case, lat, lon]
            members = forecast.trajectories[:, :, step, v].transpose(1, 0, 2, 3)
            obs = truth.data[truth_idx, v].astype(np.float64)
            crps_val = float(np.mean(crps_ensemble(members, obs) * w))
            rmse_val = rmse(members.mean(axis=0), obs, w)
            try:
                ssr_val = ssr(members, obs, w)
            except MetricError:
                ssr_val = 0.0
            records.append(
                MetricRecord(
                    method=method,
                    variable=name,
                    lead_days=int(lead),
                    crps=crps_val,
                    rmse=rmse_val,
                    ssr=ssr_val,
                    seed=seed,
                )
            )
    return records
