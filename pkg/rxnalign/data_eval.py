"""
@module data_eval
@description Dataset ingestion, quarantine, splits, baselines and evaluation metrics
@version 0.1.0
@last_updated 2026-10-18
@status stable

Dataset schemas (CSV, one reaction per row, ``reaction`` is atom-mapped):

    uspto_condition   reaction, catalyst, solvent1, solvent2, reagent1, reagent2[, split]
    uspto_500mt       reaction[, split]            reagents are re-labelled from mapping
    buchwald_hartwig  reaction, yield[, split]     condition molecules = reagents
    selectivity       reaction, ddg | ratio[, temperature][, split]

Rows that fail to parse or align are quarantined with a short reason and
never silently dropped: accepted + quarantined always equals the row count.
"""

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import mean_absolute_error, mean_squared_error, r2_score
from sklearn.model_selection import train_test_split

from rxnalign.errors import DatasetError, RxnAlignError
from rxnalign.molgraph import canonical_form, canonicalize_smiles, parse_reaction
from rxnalign.rxncore import (
    COMPONENT_SLOTS,
    DEFAULT_TEMPERATURE,
    SLOT_NAMES,
    AlignedReaction,
    ConditionCombo,
    SelectivityTarget,
    align_atoms,
    order_reagents,
    split_reactants_by_mapping,
)

log = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "valid", "test")
_TAG_ALIASES = {
    "train": "train",
    "valid": "valid",
    "val": "valid",
    "validation": "valid",
    "test": "test",
}


@dataclass(frozen=True)
class Schema:
    name: str
    required: Tuple[str, ...]
    optional: Tuple[str, ...] = ("split",)
    one_of: Tuple[str, ...] = ()


SCHEMAS: Dict[str, Schema] = {
    "uspto_condition": Schema("uspto_condition", ("reaction",) + SLOT_NAMES),
    "uspto_500mt": Schema("uspto_500mt", ("reaction",)),
    "buchwald_hartwig": Schema("buchwald_hartwig", ("reaction", "yield")),
    "selectivity": Schema(
        "selectivity", ("reaction",), ("split", "temperature"), one_of=("ddg", "ratio")
    ),
}


@dataclass
class DatasetRow:
    """
    One accepted reaction.

    Attributes:
        index: Row number in the source file
        reaction: Reaction SMILES as given
        aligned: Aligned reaction with reaction centers and condition molecules
        conditions: Five-slot condition combination (uspto_condition)
        reagents: Ordered canonical reagent SMILES (uspto_500mt target)
        target: Yield (0-100) or ΔΔG‡ in kcal/mol
        split: Split tag from the file, if any
        group: Canonical reaction key ignoring map numbers
    """

    index: int
    reaction: str
    aligned: AlignedReaction
    conditions: Optional[ConditionCombo] = None
    reagents: Tuple[str, ...] = ()
    target: Optional[float] = None
    split: Optional[str] = None
    group: str = ""


@dataclass(frozen=True)
class QuarantineRecord:
    index: int
    reaction: str
    reason: str
    message: str


@dataclass
class IngestResult:
    rows: List[DatasetRow] = field(default_factory=list)
    quarantine: List[QuarantineRecord] = field(default_factory=list)
    total: int = 0

    def reasons(self) -> Dict[str, int]:
        return dict(Counter(record.reason for record in self.quarantine))


def _cell(value) -> Optional[str]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    text = str(value).strip()
    return text or None


def _canonical_slot(value) -> Optional[str]:
    text = _cell(value)
    return canonicalize_smiles(text) if text else None


def reaction_key(rxn: AlignedReaction) -> str:
    """Canonical ``reactants>>products`` text, map numbers ignored."""
    return f"{canonical_form(rxn.reactant)}>>{canonical_form(rxn.product)}"


def _normalize_tag(value) -> Optional[str]:
    text = _cell(value)
    if text is None:
        return None
    tag = _TAG_ALIASES.get(text.lower())
    if tag is None:
        raise ValueError(f"unknown split tag {text!r}")
    return tag


def _float_cell(record: Dict, column: str) -> Optional[float]:
    text = _cell(record.get(column))
    return float(text) if text is not None else None


def _build_row(
    index: int, record: Dict, schema: Schema, temperature: float, labelled: bool = True
) -> DatasetRow:
    text = _cell(record.get("reaction"))
    if text is None:
        raise ValueError("empty reaction")
    reactants, reagents, products = parse_reaction(text)
    reactants, reagents = split_reactants_by_mapping(reactants, reagents, products)
    ordered = order_reagents(reagents)

    conditions = None
    target = None
    if schema.name == "uspto_condition" and labelled:
        conditions = ConditionCombo.from_slots(
            [_canonical_slot(record.get(s)) for s in SLOT_NAMES]
        )
    elif schema.name == "buchwald_hartwig":
        target = _float_cell(record, "yield")
    elif schema.name == "selectivity":
        temp = _float_cell(record, "temperature") or temperature
        ddg = _float_cell(record, "ddg")
        ratio = _float_cell(record, "ratio")
        if ddg is not None:
            target = SelectivityTarget.from_ddg(ddg, temp).ddg
        elif ratio is not None:
            target = SelectivityTarget.from_ratio(ratio, temp).ddg
    if target is None and labelled and schema.name in ("buchwald_hartwig", "selectivity"):
        raise ValueError("missing target")
    if target is not None and not math.isfinite(target):
        raise ValueError("non-finite target")

    uses_condition_graphs = schema.name in ("buchwald_hartwig", "selectivity")
    aligned = align_atoms(
        reactants,
        products,
        condition_mols=ordered if uses_condition_graphs else (),
        condition_text=".".join(canonical_form(m) for m in ordered) or None,
    )
    return DatasetRow(
        index=index,
        reaction=text,
        aligned=aligned,
        conditions=conditions,
        reagents=tuple(canonical_form(m) for m in ordered),
        target=target,
        split=_normalize_tag(record.get("split")),
        group=reaction_key(aligned),
    )


def prepare_reaction(text: str, schema: str) -> DatasetRow:
    """
    Parse and align a single unlabelled reaction the way ``ingest`` would.

    Raises:
        SmilesError, ReactionSmilesError, AlignmentError: On invalid input
    """
    if schema not in SCHEMAS:
        raise DatasetError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    return _build_row(
        0, {"reaction": text}, SCHEMAS[schema], DEFAULT_TEMPERATURE, labelled=False
    )


def ingest(
    path: Union[str, Path], schema: str, temperature: float = DEFAULT_TEMPERATURE
) -> IngestResult:
    """
    Read a dataset CSV, aligning every reaction.

    Args:
        path: CSV file
        schema: One of SCHEMAS
        temperature: Default temperature for ratio targets without their own

    Returns:
        IngestResult with accepted rows and quarantine records

    Raises:
        DatasetError: Unknown schema, unreadable file or missing columns
    """
    if schema not in SCHEMAS:
        raise DatasetError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    spec = SCHEMAS[schema]
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    missing = [c for c in spec.required if c not in frame.columns]
    if spec.one_of and not any(c in frame.columns for c in spec.one_of):
        missing.append(" | ".join(spec.one_of))
    if missing:
        raise DatasetError(f"{path}: missing columns {missing} for schema {schema}")
    return ingest_records(frame.to_dict(orient="records"), schema, temperature)


def ingest_records(
    records: Sequence[Dict], schema: str, temperature: float = DEFAULT_TEMPERATURE
) -> IngestResult:
    """Ingest already-loaded records (dicts keyed by column name)."""
    spec = SCHEMAS[schema]
    result = IngestResult(total=len(records))
    for index, record in enumerate(records):
        try:
            result.rows.append(_build_row(index, record, spec, temperature))
        except RxnAlignError as exc:
            result.quarantine.append(
                QuarantineRecord(index, str(record.get("reaction", "")), exc.reason, str(exc))
            )
        except (ValueError, KeyError, OverflowError) as exc:
            result.quarantine.append(
                QuarantineRecord(index, str(record.get("reaction", "")), "invalid value", str(exc))
            )
    if result.quarantine:
        log.warning(
            "quarantined %d of %d rows: %s",
            len(result.quarantine),
            result.total,
            result.reasons(),
        )
    return result


def write_quarantine(path: Union[str, Path], records: Iterable[QuarantineRecord]) -> int:
    """Write quarantine records as JSON lines; returns the number written."""
    count = 0
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(asdict(record), ensure_ascii=False) + "\n")
            count += 1
    return count


def normalized_frame(rows: Sequence[DatasetRow]) -> pd.DataFrame:
    """Accepted rows with derived columns, one line per reaction."""
    records = []
    for row in rows:
        rxn = row.aligned
        record = {
            "index": row.index,
            "reaction": row.reaction,
            "reactants": canonical_form(rxn.reactant),
            "reagents": ".".join(row.reagents),
            "products": canonical_form(rxn.product),
            "pair_count": rxn.pair_count,
            "leaving_atoms": len(rxn.leaving_set),
            "reaction_center_atoms": rxn.rc_set.size,
            "target": row.target,
            "split": row.split or "",
        }
        if row.conditions is not None:
            record.update(
                {name: value or "" for name, value in zip(SLOT_NAMES, row.conditions.slots())}
            )
        records.append(record)
    return pd.DataFrame.from_records(records)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _split_counts(n: int, fractions: Sequence[float]) -> Tuple[int, int, int]:
    fractions = list(fractions)
    if len(fractions) == 2:
        fractions = [fractions[0], 0.0, fractions[1]]
    valid = int(round(n * fractions[1]))
    test = int(round(n * fractions[2]))
    return n - valid - test, valid, test


def random_split(n: int, fractions: Sequence[float], seed: int) -> np.ndarray:
    """Seeded random assignment with exact counts (e.g. 700/300 for 7:3 on 1000)."""
    _, valid, test = _split_counts(n, fractions)
    tags = np.full(n, "train", dtype=object)
    indices = np.arange(n)
    if test:
        indices, test_idx = train_test_split(indices, test_size=test, random_state=seed)
        tags[test_idx] = "test"
    if valid:
        _, valid_idx = train_test_split(indices, test_size=valid, random_state=seed + 1)
        tags[valid_idx] = "valid"
    return tags


def read_split_file(path: Union[str, Path], n: int) -> np.ndarray:
    """
    Split tags from a CSV with a ``split`` column (and optional ``index``).

    Raises:
        DatasetError: If the file does not cover exactly ``n`` rows or has
            non-integer indices
    """
    try:
        frame = pd.read_csv(path, dtype={"split": str})
    except ValueError as exc:
        raise DatasetError(f"{path}: unreadable split file: {exc}") from exc
    if "split" not in frame.columns:
        raise DatasetError(f"{path}: split file needs a 'split' column")
    tags = np.full(n, None, dtype=object)
    if "index" in frame.columns:
        try:
            indices = frame["index"].astype(int)
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: split file index column must be integers") from exc
        for index, tag in zip(indices, frame["split"]):
            if not 0 <= index < n:
                raise DatasetError(f"{path}: row index {index} outside dataset of {n}")
            tags[index] = _normalize_tag(tag)
    else:
        if len(frame) != n:
            raise DatasetError(f"{path}: {len(frame)} split tags for {n} rows")
        tags[:] = [_normalize_tag(tag) for tag in frame["split"]]
    if any(tag is None for tag in tags):
        raise DatasetError(f"{path}: some rows have no split tag")
    return tags


def make_splits(
    rows: Sequence[DatasetRow],
    kind: str = "random",
    fractions: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    split_file: Optional[Union[str, Path]] = None,
) -> Dict[str, List[DatasetRow]]:
    """
    Assign rows to train/valid/test.

    Args:
        rows: Accepted dataset rows
        kind: "random" (seeded), "column" (tags from the data) or "file"
        fractions: (train, valid, test) or (train, test)
        seed: Seed for random splits
        split_file: Tag file for kind == "file", indexed by source row number

    Returns:
        Mapping of split tag to rows
    """
    if kind == "random":
        tags = random_split(len(rows), fractions, seed)
    elif kind == "column":
        tags = [row.split for row in rows]
        if any(tag is None for tag in tags):
            raise DatasetError("split: column requires a split tag on every row")
    elif kind == "file":
        if split_file is None:
            raise DatasetError("split: file requires a split file")
        total = max((row.index for row in rows), default=-1) + 1
        by_source = read_split_file(split_file, total)
        tags = [by_source[row.index] for row in rows]
    else:
        raise DatasetError(f"unknown split kind {kind!r}")
    out: Dict[str, List[DatasetRow]] = {tag: [] for tag in SPLIT_TAGS}
    for row, tag in zip(rows, tags):
        out[tag].append(row)
    return out


def make_repeated_splits(
    n: int, fractions: Sequence[float] = (0.7, 0.3), seeds: Iterable[int] = range(10)
) -> List[np.ndarray]:
    """One random split per seed (the 7:3 ten-times protocol by default)."""
    return [random_split(n, fractions, seed) for seed in seeds]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class RegressionReport:
    mae: float
    rmse: float
    r2: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def regression_metrics(preds: Sequence[float], targets: Sequence[float]) -> RegressionReport:
    """MAE, RMSE and R² of predictions against targets."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError(
            f"need equally sized non-empty inputs, got {preds.shape} and {targets.shape}"
        )
    return RegressionReport(
        mae=float(mean_absolute_error(targets, preds)),
        rmse=float(math.sqrt(mean_squared_error(targets, preds))),
        r2=float(r2_score(targets, preds)),
    )


def aggregate_reports(reports: Sequence[RegressionReport]) -> Dict[str, Tuple[float, float]]:
    """Mean and standard deviation of each metric across repeated splits."""
    out = {}
    for name in ("mae", "rmse", "r2"):
        values = np.array([getattr(r, name) for r in reports])
        out[name] = (float(values.mean()), float(values.std()))
    return out


Combo = Union[ConditionCombo, Sequence[str], str]


def _canonical(text: Optional[str]) -> Optional[str]:
    if text is None:
        return None
    try:
        return canonicalize_smiles(text)
    except RxnAlignError:
        return text


def reagent_multiset(combo: Union[Sequence[str], str]) -> Counter:
    """Canonical multiset of molecules in a '.'-joined string or a sequence."""
    parts = combo.split(".") if isinstance(combo, str) else list(combo)
    return Counter(_canonical(p) for p in parts if p)


def _slot_counter(combo: ConditionCombo, component: str) -> Counter:
    return Counter(_canonical(value) for value in combo.component(component))


def combos_match(
    pred: Combo, ref: Combo, mode: str = "slots", component: Optional[str] = None
) -> bool:
    """
    Order-insensitive match within each component type.

    In "slots" mode the catalyst must agree and the solvent and reagent pairs
    must agree as multisets; None only equals None. In "generation" mode the
    whole reagent multiset must agree.
    """
    if mode == "generation":
        return reagent_multiset(pred) == reagent_multiset(ref)
    components = [component] if component else list(COMPONENT_SLOTS)
    return all(_slot_counter(pred, c) == _slot_counter(ref, c) for c in components)


def topk_accuracy(
    predictions: Sequence[Sequence[Combo]],
    references: Sequence[Sequence[Combo]],
    k: int,
    mode: str = "slots",
    component: Optional[str] = None,
) -> float:
    """
    Fraction of rows where any of the top-k predictions matches any reference.

    Missing ranks (fewer than k predictions) count as misses.
    """
    if len(predictions) != len(references):
        raise ValueError("predictions and references differ in length")
    if not predictions:
        return 0.0
    hits = 0
    for preds, refs in zip(predictions, references):
        if any(combos_match(p, r, mode, component) for p in list(preds)[:k] for r in refs):
            hits += 1
    return hits / len(predictions)


def topk_report(
    predictions: Sequence[Sequence[Combo]],
    references: Sequence[Sequence[Combo]],
    ks: Sequence[int] = (1, 3, 5, 10),
    mode: str = "slots",
) -> Dict[str, Dict[str, float]]:
    """Top-k accuracies overall and, in slots mode, per component type."""
    report = {"overall": {f"top{k}": topk_accuracy(predictions, references, k, mode) for k in ks}}
    if mode == "slots":
        for name in COMPONENT_SLOTS:
            report[name] = {
                f"top{k}": topk_accuracy(predictions, references, k, mode, name) for k in ks
            }
    return report


def group_references(rows: Sequence[DatasetRow], mode: str = "slots") -> Dict[str, List[Combo]]:
    """All recorded condition sets per canonical reaction."""
    groups: Dict[str, List[Combo]] = defaultdict(list)
    for row in rows:
        groups[row.group].append(row.conditions if mode == "slots" else row.reagents)
    return dict(groups)


def _combo_key(combo: Combo) -> Hashable:
    if isinstance(combo, ConditionCombo):
        return tuple(
            tuple(sorted(_slot_counter(combo, c).items(), key=repr)) for c in COMPONENT_SLOTS
        )
    return tuple(sorted(reagent_multiset(combo).items(), key=repr))


def frequency_baseline(train_combos: Sequence[Combo], k: int = 10) -> List[Combo]:
    """
    The k most frequent training combinations, most frequent first.

    Combinations equal under the metric are pooled; ties resolve by first
    occurrence.
    """
    counts: Counter = Counter()
    first: Dict[Hashable, Combo] = {}
    order: Dict[Hashable, int] = {}
    for position, combo in enumerate(train_combos):
        key = _combo_key(combo)
        counts[key] += 1
        if key not in first:
            first[key] = combo
            order[key] = position
    ranked = sorted(counts, key=lambda key: (-counts[key], order[key]))
    return [first[key] for key in ranked[:k]]
