"""End-to-end experiment orchestration: select -> train -> rollout -> evaluate.

A config describes a dataset (file path or synthetic generator), a list of
selection strategies, a forecaster and seed/ensemble settings. Each
(strategy, seed) cell is an independent job; the full-data baseline is always
included. Records and per-variable report tables are written under the
output directory.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from . import synthetic
from .dataset import GriddedDataset, SplitSpec
from .forecast import ForecasterSpec, rollout, train
from .metrics import MetricRecord, area_weights, evaluate_forecast, records_to_csv
from .selection import SelectionBudget, run_strategy

log = logging.getLogger("stratacast")


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    strategies: list[str]
    forecaster: ForecasterSpec
    split: SplitSpec
    dataset_path: str | None = None
    synthetic: synthetic.SyntheticConfig | None = None
    fraction: float = 0.2
    n_members: int = 8
    n_seeds: int = 1
    base_seed: int = 0
    leads_days: tuple = (5, 10)
    n_steps: int = 10
    eval_stride_hours: float = 24.0
    flat_grid: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not self.strategies:
            raise ExperimentError("strategies must be non-empty")
        if self.n_seeds < 1:
            raise ExperimentError("n_seeds must be >= 1")
        if (self.dataset_path is None) == (self.synthetic is None):
            raise ExperimentError("exactly one of dataset_path / synthetic required")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        d = json.loads(path.read_text())
        synth = None
        if "synthetic" in d:
            s = dict(d["synthetic"])
            grid = dsmod.GridSpec(np.asarray(s.pop("lats")), np.asarray(s.pop("lons")))
            synth = synthetic.SyntheticConfig(grid=grid, **s)
        ds_path = d.get("dataset_path")
        if ds_path is not None:
            ds_path = str((path.parent / ds_path).resolve())
        split = d["split"]
        return cls(
            strategies=list(d["strategies"]),
            forecaster=ForecasterSpec(
                d["forecaster"]["kind"], d["forecaster"].get("hyperparameters", {})
            ),
            split=SplitSpec(
                tuple(split["train_years"]),
                tuple(split["val_years"]) if split.get("val_years") else None,
                tuple(split["test_years"]) if split.get("test_years") else None,
            ),
            dataset_path=ds_path,
            synthetic=synth,
            fraction=float(d.get("fraction", 0.2)),
            n_members=int(d.get("n_members", 8)),
            n_seeds=int(d.get("n_seeds", 1)),
            base_seed=int(d.get("base_seed", 0)),
            leads_days=tuple(d.get("leads_days", (5, 10))),
            n_steps=int(d.get("n_steps", 10)),
            eval_stride_hours=float(d.get("eval_stride_hours", 24.0)),
            flat_grid=bool(d.get("flat_grid", False)),
            jobs=int(d.get("jobs", 1)),
        )


def _load_or_generate(cfg: ExperimentConfig) -> GriddedDataset:
    if cfg.dataset_path is not None:
        return dsmod.load_dataset(cfg.dataset_path)
    return synthetic.generate(cfg.synthetic)


def _eval_inits(ds: GriddedDataset, cfg: ExperimentConfig) -> list[int]:
    inits = dsmod.valid_init_times(
        ds, cfg.split, which="test", max_lead_hours=cfg.n_steps * 24.0
    )
    if not inits:
        raise ExperimentError("test split yields no valid init times")
    stride = ds.stride_hours
    every = max(int(round(cfg.eval_stride_hours / stride)), 1)
    return inits[::every]


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> list[MetricRecord]:
    """Run all (strategy, seed) cells; returns per-seed records plus mean rows."""
    out_dir = Path(out_dir)
    (out_dir / "selections").mkdir(parents=True, exist_ok=True)

    raw = _load_or_generate(cfg)
    stats = dsmod.fit_standardization(raw, cfg.split)
    ds = dsmod.standardize(raw, stats)

    train_idx = dsmod.split_time_indices(ds, cfg.split.train_years)
    if train_idx.size == 0:
        raise ExperimentError("empty training split")
    train_view = ds.slice_time(int(train_idx[0]), int(train_idx[-1]) + 1)
    candidates = dsmod.valid_init_times(
        train_view, cfg.split, which="train", max_lead_hours=24.0, history_hours=24.0
    )
    if not candidates:
        raise ExperimentError("training split yields no candidate times")
    eval_inits = _eval_inits(ds, cfg)
    w = area_weights(ds.grid, flat=cfg.flat_grid)

    strategies = list(cfg.strategies)
    if "full" not in strategies:
        strategies.insert(0, "full")
    budget = SelectionBudget(cfg.fraction)

    def run_cell(strategy: str, seed: int) -> list[MetricRecord]:
        try:
            log.info("cell start: strategy=%s seed=%d", strategy, seed)
            sel = run_strategy(strategy, train_view, candidates, budget, seed)
            sel.save(out_dir / "selections" / f"{strategy}_seed{seed}.json")
            model = train(cfg.forecaster, train_view, sel, seed=seed, split=cfg.split)
            fc = rollout(
                model, ds, eval_inits, cfg.n_members, n_steps=cfg.n_steps, seed=seed
            )
            return evaluate_forecast(
                fc, ds, leads_days=cfg.leads_days, w=w, method=strategy, seed=seed
            )
        except Exception as e:  # tag the failing stage for the caller
            raise ExperimentError(f"cell ({strategy}, seed {seed}) failed: {e}") from e

    cells = [(s, cfg.base_seed + i) for s in strategies for i in range(cfg.n_seeds)]
    records: list[MetricRecord] = []
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            for recs in pool.map(lambda c: run_cell(*c), cells):
                records.extend(recs)
    else:
        for c in cells:
            records.extend(run_cell(*c))

    records.sort(key=lambda r: (r.method, r.variable, r.lead_days, r.seed))
    records.extend(aggregate_means(records))

    (out_dir / "records.json").write_text(
        json.dumps([asdict(r) for r in records], indent=2)
    )
    mean_rows = [r for r in records if r.seed is None]
    (out_dir / "metrics.csv").write_text(records_to_csv(mean_rows))
    (out_dir / "metrics_by_seed.csv").write_text(
        _seeded_csv([r for r in records if r.seed is not None])
    )
    return records


def _seeded_csv(records: list[MetricRecord]) -> str:
    lines = ["method,seed,variable,lead_days,crps,rmse,ssr"]
    for r in records:
        lines.append(
            f"{r.method},{r.seed},{r.variable},{r.lead_days},"
            f"{r.crps:.6g},{r.rmse:.6g},{r.ssr:.6g}"
        )
    return "\n".join(lines) + "\n"


def aggregate_means(records: list[MetricRecord]) -> list[MetricRecord]:
    """Seed-mean rows (seed=None), one per (method, variable, lead)."""
    groups: dict[tuple, list[MetricRecord]] = {}
    for r in records:
        if r.seed is None:
            continue
        groups.setdefault((r.method, r.variable, r.lead_days), []).append(r)
    out = []
    for (method, variable, lead), rs in sorted(groups.items()):
        out.append(
            MetricRecord(
                method=method,
                variable=variable,
                lead_days=lead,
                crps=float(np.mean([r.crps for r in rs])),
                rmse=float(np.mean([r.rmse for r in rs])),
                ssr=float(np.mean([r.ssr for r in rs])),
                seed=None,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return s if s else "0"


def _cell(values: list[float]) -> str:
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    if std > 0.0 and _fmt(std) != "0":
        return f"{_fmt(mean)}±{_fmt(std)}"
    return _fmt(mean)


REPORT_HEADER = "strategy,crps_5d,crps_10d,rmse_5d,rmse_10d,ssr_5d,ssr_10d"


def emit_report(records: list[MetricRecord], out_dir: str | Path) -> dict:
    """Per-variable CSV + JSON summary and per-lead SSR curve data.

    Table cells are seed means at 5d/10d (mean±std when seeds disagree);
    the SSR curves carry every lead present in the records.
    """
    if not records:
        raise ExperimentError("no records to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_seed = [r for r in records if r.seed is not None] or list(records)

    summary: dict = {}
    variables = sorted({r.variable for r in per_seed})
    for variable in variables:
        rows = {}
        order = []
        for r in per_seed:
            if r.variable != variable:
                continue
            if r.method not in rows:
                rows[r.method] = {}
                order.append(r.method)
            rows[r.method].setdefault(r.lead_days, {"crps": [], "rmse": [], "ssr": []})
            cell = rows[r.method][r.lead_days]
            cell["crps"].append(r.crps)
            cell["rmse"].append(r.rmse)
            cell["ssr"].append(r.ssr)

        lines = [REPORT_HEADER]
        json_rows = []
        for method in order:
            cells = []
            jrow = {"strategy": method}
            for metric in ("crps", "rmse", "ssr"):
                for lead in (5, 10):
                    vals = rows[method].get(lead, {}).get(metric, [])
                    cells.append(_cell(vals) if vals else "")
                    jrow[f"{metric}_{lead}d"] = float(np.mean(vals)) if vals else None
            lines.append(",".join([method] + cells))
            json_rows.append(jrow)
        (out_dir / f"report_{variable}.csv").write_text("\n".join(lines) + "\n")

        # plot-ready SSR-vs-lead data
        curve_lines = ["strategy,lead_days,ssr"]
        curves: dict[str, list] = {}
        for method in order:
            for lead in sorted(rows[method]):
                vals = rows[method][lead]["ssr"]
                mean = float(np.mean(vals))
                curve_lines.append(f"{method},{lead},{mean:.6g}")
                curves.setdefault(method, []).append({"lead_days": lead, "ssr": mean})
        (out_dir / f"ssr_curve_{variable}.csv").write_text("\n".join(curve_lines) + "\n")

        summary[variable] = {"table": json_rows, "ssr_curves": curves}
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2))
    return summary
