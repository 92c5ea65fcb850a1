#!/usr/bin/env python3
"""
Run the repeated random-split protocol for yield and selectivity models.

Each seed draws a fresh 7:3 train/test split, trains from the given config
and scores the test rows; the table reports mean ± std across seeds.

@module repeated_splits
@description Ten-split train/test protocol with mean ± std regression metrics
@version 0.1.0
@last_updated 2026-10-18
@status stable
"""

import argparse
import json
import logging
import pathlib
import sys
from typing import Dict, List

from rxnalign.config import load_config, resolve_data_path
from rxnalign.data_eval import (
    aggregate_reports,
    ingest,
    make_repeated_splits,
    regression_metrics,
)
from rxnalign.errors import RxnAlignError
from rxnalign.train import Predictor, train_task


def run(config_path: pathlib.Path, seeds: List[int], fractions: List[float]) -> Dict:
    cfg = load_config(config_path)
    if not cfg.is_regression_task:
        raise SystemExit(f"Error: {cfg.task} is not a regression task")
    result = ingest(resolve_data_path(cfg.data_path), cfg.schema, cfg.temperature)
    rows = result.rows
    print(f"Loaded {len(rows)} rows ({len(result.quarantine)} quarantined)", file=sys.stderr)

    reports = []
    for seed, tags in zip(seeds, make_repeated_splits(len(rows), fractions, seeds)):
        splits = {"train": [], "valid": [], "test": []}
        for row, tag in zip(rows, tags):
            splits[tag].append(row)
        cfg.seed = seed
        checkpoint = train_task(splits, cfg)
        predictor = Predictor(checkpoint)
        preds = [predictor.predict_value(row) for row in splits["test"]]
        targets = [checkpoint.scaler.report(row.target) for row in splits["test"]]
        report = regression_metrics(preds, targets)
        reports.append(report)
        print(
            f"  seed {seed}: MAE {report.mae:.4f}  RMSE {report.rmse:.4f}  R² {report.r2:.4f}",
            file=sys.stderr,
        )

    summary = aggregate_reports(reports)
    return {
        "task": cfg.task,
        "seeds": seeds,
        "runs": [r.to_dict() for r in reports],
        "summary": {name: {"mean": m, "std": s} for name, (m, s) in summary.items()},
    }


def main():
    """Main entry point for CLI."""
    parser = argparse.ArgumentParser(
        description="Repeated random-split evaluation of a yield or selectivity config",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Ten 7:3 splits of the Buchwald-Hartwig config
  %(prog)s configs/buchwald_hartwig.yaml

  # Three seeds, exporting JSON
  %(prog)s configs/ch_functionalization.yaml --seeds 3 --output ch.json
        """,
    )
    parser.add_argument("config", type=pathlib.Path, help="YAML training config")
    parser.add_argument("--seeds", type=int, default=10, help="Number of splits (default: 10)")
    parser.add_argument(
        "--test-fraction", type=float, default=0.3, help="Test share of each split"
    )
    parser.add_argument("--output", type=pathlib.Path, help="Write results to JSON file")
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING)
    try:
        results = run(
            args.config, list(range(args.seeds)), [1.0 - args.test_fraction, args.test_fraction]
        )
    except RxnAlignError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return exc.exit_code

    print()
    print(f"{results['task']} over {len(results['seeds'])} splits:")
    for name, stats in results["summary"].items():
        print(f"  {name.upper():<5} {stats['mean']:.4f} ± {stats['std']:.4f}")

    if args.output:
        args.output.write_text(json.dumps(results, indent=2))
        print(f"\nResults exported to: {args.output}")
    print("✅ Done.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
