"""Command-line entry point.

Subcommands: generate-data, select, train, rollout, evaluate, run, report.
Exit codes: 0 success, 1 usage error, 2 data/validation error. All log output
goes to stderr; data goes to files under --out. Log level comes from the
STRATACAST_LOG environment variable (error/warn/info/debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from . import synthetic
from .dataset import SplitSpec
from .experiment import ExperimentConfig, emit_report, run_experiment
from .forecast import (
    ForecasterSpec,
    load_forecast,
    load_forecaster,
    rollout,
    save_forecast,
    save_forecaster,
    train,
)
from .metrics import MetricRecord, area_weights, evaluate_forecast, records_to_csv
from .selection import STRATEGIES, SelectionBudget, SubsetSelection, run_strategy

log = logging.getLogger("stratacast")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; here 2 is reserved for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _setup_logging():
    level = os.environ.get("STRATACAST_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _years(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return (int(lo), int(hi or lo))


def _split_from_args(args) -> SplitSpec:
    return SplitSpec(
        train_years=_years(args.train_years),
        val_years=_years(args.val_years) if args.val_years else None,
        test_years=_years(args.test_years) if args.test_years else None,
    )


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stratacast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", help="generate a synthetic toy-climate dataset")
    _add_common(p)
    p.add_argument("--config", required=True, help="synthetic config JSON")

    p = sub.add_parser("select", help="run one selection strategy")
    _add_common(p)
    p.add_argument("--data", required=True, help="field-tensor dataset path")
    p.add_argument("--strategy", required=True, choices=sorted(STRATEGIES))
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--train-years", required=True, help="Y0:Y1 training year range")

    p = sub.add_parser("train", help="train a forecaster on a selection")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--selection", required=True, help="selection JSON path")
    p.add_argument("--forecaster", required=True,
                   choices=["persistence", "climatology", "stochastic_linear", "toy_diffusion"])
    p.add_argument("--train-years", required=True)
    p.add_argument("--hyper", default="{}", help="hyperparameters as JSON")

    p = sub.add_parser("rollout", help="autoregressive ensemble rollout")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="forecaster file prefix")
    p.add_argument("--members", type=int, default=8)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--train-years", required=True)
    p.add_argument("--test-years", required=True)

    p = sub.add_parser("evaluate", help="score a forecast against truth")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--forecast", required=True, help="forecast file prefix")
    p.add_argument("--train-years", required=True)
    p.add_argument("--leads", default="5,10", help="comma-separated lead days")
    p.add_argument("--flat-grid", action="store_true", help="uniform area weights")
    p.add_argument("--method", default="", help="method label for the records")

    p = sub.add_parser("run", help="full experiment from a config file")
    _add_common(p)
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--jobs", type=int, default=None, help="worker cap")

    p = sub.add_parser("report", help="emit report tables from records JSON")
    _add_common(p)
    p.add_argument("--records", required=True, help="records.json from a run")

    return parser


def _load_standardized(path, train_years):
    ds = dsmod.load_dataset(path)
    split = SplitSpec(train_years=train_years)
    stats = dsmod.fit_standardization(ds, split)
    return dsmod.standardize(ds, stats), split


def cmd_generate_data(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    grid = dsmod.GridSpec(np.asarray(cfg.pop("lats")), np.asarray(cfg.pop("lons")))
    cfg.setdefault("seed", args.seed)
    scfg = synthetic.SyntheticConfig(grid=grid, **cfg)
    ds = synthetic.generate(scfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = dsmod.save_dataset(ds, out / "synthetic.ften")
    log.info("wrote %s (%d steps)", path, ds.n_times)
    return 0


def cmd_select(args) -> int:
    ds, split = _load_standardized(args.data, _years(args.train_years))
    candidates = dsmod.valid_init_times(ds, split, which="train", max_lead_hours=24.0)
    sel = run_strategy(
        args.strategy, ds, candidates, SelectionBudget(args.fraction), args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sel.save(out / f"{args.strategy}_seed{args.seed}.json")
    return 0


def cmd_train(args) -> int:
    ds, split = _load_standardized(args.data, _years(args.train_years))
    sel = SubsetSelection.load(args.selection)
    spec = ForecasterSpec(args.forecaster, json.loads(args.hyper))
    model = train(spec, ds, sel, seed=args.seed, split=split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_forecaster(model, out / f"{args.forecaster}")
    return 0


def cmd_rollout(args) -> int:
    ds, split = _load_standardized(args.data, _years(args.train_years))
    split = SplitSpec(train_years=split.train_years, test_years=_years(args.test_years))
    model = load_forecaster(args.model)
    inits = dsmod.valid_init_times(
        ds, split, which="test", max_lead_hours=args.steps * 24.0
    )
    stride = max(int(round(24.0 / ds.stride_hours)), 1)
    fc = rollout(model, ds, inits[::stride], args.members, n_steps=args.steps,
                 seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_forecast(fc, out / "forecast")
    return 0


def cmd_evaluate(args) -> int:
    ds, _ = _load_standardized(args.data, _years(args.train_years))
    fc = load_forecast(args.forecast)
    w = area_weights(ds.grid, flat=args.flat_grid)
    leads = [int(x) for x in args.leads.split(",")]
    records = evaluate_forecast(fc, ds, leads_days=leads, w=w, method=args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(records_to_csv(records))
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.seed:
        cfg.base_seed = args.seed
    records = run_experiment(cfg, args.out)
    emit_report(records, args.out)
    return 0


def cmd_report(args) -> int:
    rows = json.loads(Path(args.records).read_text())
    records = [MetricRecord(**r) for r in rows]
    emit_report(records, args.out)
    return 0


COMMANDS = {
    "generate-data": cmd_generate_data,
    "select": cmd_select,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
