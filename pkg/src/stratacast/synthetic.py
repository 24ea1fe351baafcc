"""Deterministic seasonal toy-climate generator.

Each cell carries a phase-shifted seasonal sinusoid, a monthly regime pattern
(12 orthogonalized spatial patterns, one per calendar month) and an AR(1)
anomaly process. Everything is reproducible from the config seed, and the
monthly regime structure makes month-uniform subset coverage measurably
informative at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .dataset import DatasetError, GriddedDataset, GridSpec, normalize_static


@dataclass(frozen=True)
class SyntheticConfig:
    grid: GridSpec
    n_years: int
    stride_hours: int
    seasonal_amplitude: float
    regime_amplitude: float
    ar1_coefficient: float
    noise_std: float
    seed: int
    n_regimes: int = 12  # one pattern per calendar month
    n_variables: int = 1
    start_year: int = 2000
    with_static: bool = True

    def __post_init__(self):
        if not 0.0 <= self.ar1_coefficient < 1.0:
            raise DatasetError("ar1_coefficient must lie in [0, 1)")
        if self.noise_std < 0:
            raise DatasetError("noise_std must be >= 0")
        if self.n_years < 1:
            raise DatasetError("n_years must be >= 1")
        if self.n_regimes != 12:
            raise DatasetError("regimes are tied to calendar months; n_regimes must be 12")
        if self.n_regimes > self.grid.n_cells:
            raise DatasetError("grid too small to orthogonalize 12 regime patterns")


def _timestamps(cfg: SyntheticConfig) -> list[datetime]:
    out = []
    t = datetime(cfg.start_year, 1, 1)
    end_year = cfg.start_year + cfg.n_years
    step = timedelta(hours=cfg.stride_hours)
    while t.year < end_year:
        out.append(t)
        t = t + step
    return out


def cell_phases(cfg: SyntheticConfig, var: int) -> np.ndarray:
    """Fixed per-cell seasonal phase in [0, 2pi), flat over the grid."""
    rng = np.random.default_rng([cfg.seed, var, 0])
    return rng.uniform(0.0, 2.0 * math.pi, size=cfg.grid.n_cells)

def regime_patterns(cfg: SyntheticConfig, var: int) -> np.ndarray:
    """12 x n_cells monthly patterns, Gram-Schmidt orthogonal, unit RMS per cell."""
    rng = np.random.default_rng([cfg.seed, var, 1])
    raw = rng.standard_normal((cfg.n_regimes, cfg.grid.n_cells))
    out = np.empty_like(raw)
    for i in range(cfg.n_regimes):
        p = raw[i]
        for j in range(i):
            p = p - (p @ out[j]) / (out[j] @ out[j]) * out[j]
        norm = np.linalg.norm(p)
        if norm == 0.0:
            raise DatasetError("degenerate regime pattern draw")
        # scale so per-cell mean square is 1, keeping regime_amplitude meaningful
        out[i] = p / norm * math.sqrt(cfg.grid.n_cells)
    return out


def day_of_year(t: datetime) -> float:
    """Fractional days since the start of the timestamp's year."""
    return (t - datetime(t.year, 1, 1)).total_seconds() / 86400.0


def seasonal_component(cfg: SyntheticConfig, t: datetime, phases: np.ndarray) -> np.ndarray:
    angle = 2.0 * math.pi * day_of_year(t) / 365.25
    return cfg.seasonal_amplitude * np.sin(angle + phases)


def generate(cfg: SyntheticConfig) -> GriddedDataset:
    """Generate the toy-climate dataset; bitwise reproducible from cfg.seed."""
    timestamps = _timestamps(cfg)
    n_t = len(timestamps)
    n_cells = cfg.grid.n_cells
    months = np.array([t.month for t in timestamps]) - 1
    data = np.empty((n_t, cfg.n_variables, cfg.grid.n_lat, cfg.grid.n_lon), dtype=np.float32)

    for var in range(cfg.n_variables):
        phases = cell_phases(cfg, var)
        patterns = regime_patterns(cfg, var)
        angles = 2.0 * math.pi * np.array([day_of_year(t) for t in timestamps]) / 365.25
        seasonal = cfg.seasonal_amplitude * np.sin(angles[:, None] + phases[None, :])
        regime = cfg.regime_amplitude * patterns[months]

        noise_rng = np.random.default_rng([cfg.seed, var, 2])
        anom = np.zeros((n_t, n_cells))
        prev = np.zeros(n_cells)
        for ti in range(n_t):
            eps = noise_rng.standard_normal(n_cells) * cfg.noise_std
            prev = cfg.ar1_coefficient * prev + eps
            anom[ti] = prev

        fields = seasonal + regime + anom
        data[:, var] = fields.reshape(n_t, cfg.grid.n_lat, cfg.grid.n_lon).astype(np.float32)

    static = {}
    if cfg.with_static:
        srng = np.random.default_rng([cfg.seed, 10**6])
        orography = srng.standard_normal((cfg.grid.n_lat, cfg.grid.n_lon))
        if orography.max() > orography.min():
            static["orography"] = normalize_static(orography)

    return GriddedDataset(
        grid=cfg.grid,
        variables=[f"synthetic_{k}" for k in range(cfg.n_variables)],
        timestamps=timestamps,
        data=data,
        static_fields=static,
    )


def monthly_regime_mean(cfg: SyntheticConfig, var: int, month: int) -> np.ndarray:
    """Closed-form regime contribution to the month's climatology (flat, n_cells)."""
    return cfg.regime_amplitude * regime_patterns(cfg, var)[month - 1]
