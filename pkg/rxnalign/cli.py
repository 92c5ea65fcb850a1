#!/usr/bin/env python3
"""
@module cli
@description Command line: preprocess, train, evaluate, predict, explain, embed, gradcheck
@version 0.1.0
@last_updated 2026-10-18
@status stable

Every failure prints one JSON line ``{"error": <category>, "reason": ..., "message": ...}``
on stderr and exits with the category's code (see ``rxnalign.errors.EXIT_CODES``).
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from rxnalign import __version__
from rxnalign.config import TrainConfig, load_config, resolve_data_path
from rxnalign.data_eval import (
    SPLIT_TAGS,
    DatasetRow,
    ingest,
    make_splits,
    normalized_frame,
    prepare_reaction,
    write_quarantine,
)
from rxnalign.decoder import rc_fallback_count
from rxnalign.errors import EXIT_CODES, DatasetError, RxnAlignError, UsageError
from rxnalign.gradcheck import check_composition, run_suite
from rxnalign.heatmap import attention_rows, head_summary, reaction_svg
from rxnalign.rxncore import SLOT_NAMES, ConditionCombo
from rxnalign.train import (
    Predictor,
    evaluate_task,
    load_checkpoint,
    parameter_counts,
    save_checkpoint,
    train_task,
)

log = logging.getLogger("rxnalign")

DEBUG_ENV = "RXNALIGN_DEBUG"
NONE_LABEL = "NONE"
GRADCHECK_TOLERANCE = 1e-4


def configure_logging(verbose: bool) -> None:
    debug = verbose or os.environ.get(DEBUG_ENV, "").lower() == "true"
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _load_splits(cfg: TrainConfig) -> Dict[str, List[DatasetRow]]:
    result = ingest(resolve_data_path(cfg.data_path), cfg.schema, cfg.temperature)
    print(
        f"✅ Ingested {len(result.rows)} of {result.total} rows "
        f"({len(result.quarantine)} quarantined)"
    )
    split_file = resolve_data_path(cfg.split_file) if cfg.split_file else None
    return make_splits(result.rows, cfg.split, cfg.split_fractions, cfg.seed, split_file)


def _write_json(data, out: Optional[Path]) -> None:
    text = json.dumps(data, indent=2)
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        print(f"\nResults exported to: {out}")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    result = ingest(args.input, args.schema, args.temperature)
    frame = normalized_frame(result.rows)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.output, index=False)
    quarantine_path = args.quarantine or args.output.with_suffix(".quarantine.jsonl")
    write_quarantine(quarantine_path, result.quarantine)

    print(f"✅ {len(result.rows)} rows written to {args.output}")
    if result.quarantine:
        print(f"⚠️  {len(result.quarantine)} rows quarantined ({quarantine_path}):")
        for reason, count in sorted(result.reasons().items()):
            print(f"  - {reason}: {count}")
    return 0


def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "out_dir": str(args.out) if args.out else None}
    cfg = load_config(args.config, overrides)
    splits = _load_splits(cfg)
    print("   " + ", ".join(f"{tag}: {len(splits[tag])}" for tag in SPLIT_TAGS))

    checkpoint = train_task(splits, cfg, progress=not args.quiet)
    out = save_checkpoint(checkpoint, cfg.out_dir)
    history = pd.DataFrame([vars(record) for record in checkpoint.history])
    history.to_csv(out / "history.csv", index=False)

    counts = parameter_counts(checkpoint.build_model())
    print(f"✅ Checkpoint written to {out} (best epoch {checkpoint.best_epoch})")
    print("   parameters: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _format_report(report: Dict) -> List[str]:
    lines = []
    for name, value in report.items():
        if isinstance(value, dict):
            cells = "  ".join(f"{k}={v:.4f}" for k, v in value.items())
            lines.append(f"  {name:<10} {cells}")
        elif isinstance(value, float):
            lines.append(f"  {name:<10} {value:.4f}")
        else:
            lines.append(f"  {name:<10} {value}")
    return lines


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    cfg = checkpoint.config
    if args.config:
        data_cfg = load_config(args.config, {"seed": args.seed})
        cfg.data_path, cfg.schema = data_cfg.data_path, data_cfg.schema
        cfg.split, cfg.split_file = data_cfg.split, data_cfg.split_file
        cfg.split_fractions = data_cfg.split_fractions
    if args.seed is not None:
        cfg.seed = args.seed
    splits = _load_splits(cfg)
    if args.split == "all":
        rows = [row for tag in SPLIT_TAGS for row in splits[tag]]
    else:
        rows = splits[args.split]
    report = evaluate_task(Predictor(checkpoint), rows, args.k, train_rows=splits["train"])
    print(f"\n{cfg.task} on {args.split}:")
    for line in _format_report(report):
        print(line)
    _write_json(report, args.out)
    return 0


def _combo_json(combo: ConditionCombo) -> Dict[str, str]:
    return {name: value or NONE_LABEL for name, value in zip(SLOT_NAMES, combo.slots())}


def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    predictor = Predictor(checkpoint)
    row = prepare_reaction(args.reaction, checkpoint.config.schema)
    if checkpoint.config.is_regression_task:
        result = {"reaction": args.reaction, "task": checkpoint.config.task}
        result["prediction"] = predictor.predict_value(row)
    else:
        ranked = []
        for rank, (combo, score) in enumerate(predictor.predict_conditions(row, args.k[-1]), 1):
            entry = {"rank": rank, "score": score}
            if isinstance(combo, ConditionCombo):
                entry.update(_combo_json(combo))
            else:
                entry["reagents"] = combo
            ranked.append(entry)
        result = {"reaction": args.reaction, "task": checkpoint.config.task, "ranked": ranked}
    _write_json(result, args.out)
    return 0


def cmd_explain(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    predictor = Predictor(checkpoint)
    row = prepare_reaction(args.reaction, checkpoint.config.schema)
    captured = predictor.attention(row)
    normal = predictor.normal_heads()

    out = args.out or Path("explain")
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(attention_rows(row.aligned, captured, normal)).to_csv(
        out / "attention.csv", index=False
    )
    written = [out / "attention.csv"]
    for kind, weights in head_summary(captured, normal).items():
        path = out / f"attention_{kind}.svg"
        path.write_text(reaction_svg(row.aligned, weights, f"({kind} heads)", seed=args.seed or 0))
        written.append(path)
    if rc_fallback_count():
        print("⚠️  No reaction center found; restricted heads attended everywhere")
    print("✅ Wrote " + ", ".join(str(p) for p in written))
    return 0


def _read_reactions(path: Path) -> List[str]:
    if path.suffix == ".csv":
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        if "reaction" not in frame.columns:
            raise DatasetError(f"{path} has no 'reaction' column")
        return frame["reaction"].tolist()
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def cmd_embed(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    predictor = Predictor(checkpoint)
    arrays: Dict[str, np.ndarray] = {}
    for i, text in enumerate(_read_reactions(args.reactions)):
        trace = predictor.embed(prepare_reaction(text, checkpoint.config.schema))
        for layer, (h_r, h_p) in enumerate(zip(trace.reactant, trace.product)):
            arrays[f"r{i}_layer{layer}_reactant"] = h_r
            arrays[f"r{i}_layer{layer}_product"] = h_p
    out = args.out or Path("embeddings.npz")
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, **arrays)
    print(f"✅ Wrote {len(arrays)} arrays to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed or 0, (args.seed or 0) + args.seeds)
    results = run_suite(seeds)
    results["encoder+pooled_head"] = max(check_composition(seed) for seed in seeds)
    failed = 0
    for name, error in results.items():
        ok = error < args.tolerance
        failed += not ok
        print(f"{'✅' if ok else '❌'} {name:<22} max rel err {error:.2e}")
    print()
    if failed:
        print(f"❌ {failed} of {len(results)} checks above {args.tolerance:g}")
        return EXIT_CODES["numerics"]
    print(f"✅ All {len(results)} checks below {args.tolerance:g}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _k_values(text: str) -> List[int]:
    try:
        values = sorted({int(part) for part in text.split(",") if part.strip()})
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid k list {text!r}") from exc
    if not values or values[0] < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return values


class JsonArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises UsageError instead of printing usage and exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(
        prog="rxnalign",
        description="Atom-aligned reaction representation: conditions, yields, selectivity",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Normalize a dataset and list quarantined rows
  %(prog)s preprocess raw/bh.csv data/bh.csv --schema buchwald_hartwig

  # Train from a YAML config with a different seed
  %(prog)s train configs/buchwald_hartwig.yaml --seed 3 --out runs/bh-3

  # Evaluate on the test split, exporting JSON
  %(prog)s evaluate runs/bh-3 test --out runs/bh-3/test.json

  # Top-5 conditions for one reaction
  %(prog)s predict runs/uspto "[CH3:1][Br:2].[OH2:3]>>[CH3:1][OH:3]" --k 5

  # Finite-difference check of every differentiable op
  %(prog)s gradcheck
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Seed (overrides the config)")
    common.add_argument("--out", type=Path, help="Output file or directory")

    p = sub.add_parser("preprocess", parents=[common], help="Ingest, align and normalize a dataset")
    p.add_argument("input", type=Path, help="Raw CSV")
    p.add_argument("output", type=Path, help="Normalized CSV")
    p.add_argument("--schema", default="uspto_condition", help="Dataset schema")
    p.add_argument("--temperature", type=float, default=298.15, help="Default temperature (K)")
    p.add_argument("--quarantine", type=Path, help="Quarantine JSONL path")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="Train a model from a YAML config")
    p.add_argument("config", type=Path, help="YAML config")
    p.add_argument("--quiet", action="store_true", help="No progress bar")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="Metric report on a split")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("split", choices=[*SPLIT_TAGS, "all"])
    p.add_argument("--config", type=Path, help="Config supplying data location and split")
    p.add_argument("--k", type=_k_values, default=[1, 3, 5, 10], help="e.g. 1,3,5,10")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="Predict for one reaction SMILES")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("reaction")
    p.add_argument("--k", type=_k_values, default=[10], help="Number of ranked predictions")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", parents=[common], help="Attention weights as CSV and SVG")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("reaction")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("embed", parents=[common], help="Per-layer node embeddings (.npz)")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("reactions", type=Path, help="Text file (one per line) or CSV")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=10, help="Seeds per op")
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _report(category: str, reason: str, message: str) -> None:
    error = {"error": category, "reason": reason, "message": message}
    print(json.dumps(error), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _report(exc.category, exc.reason, str(exc))
        return exc.exit_code
    configure_logging(args.verbose)
    log.debug("rxnalign %s: %s", __version__, args.command)
    try:
        return args.func(args)
    except RxnAlignError as exc:
        _report(exc.category, exc.reason, str(exc))
        return exc.exit_code
    except OSError as exc:
        _report("input", "unreadable file", str(exc))
        return EXIT_CODES["input"]


if __name__ == "__main__":
    sys.exit(main())
