"""Shared fixtures: small datasets under tests/fixtures and tiny model configs."""

from pathlib import Path

import pytest

from rxnalign.config import build_config
from rxnalign.data_eval import ingest, make_splits
from rxnalign.decoder import reset_rc_fallback_count
from rxnalign.molgraph import parse_reaction
from rxnalign.rxncore import align_atoms, order_reagents, split_reactants_by_mapping

FIXTURES = Path(__file__).parent / "fixtures"

SUBSTITUTION = "[CH3:1][CH2:2][CH2:3][Br:4].[OH2:5]>>[CH3:1][CH2:2][CH2:3][OH:5]"


def aligned(text):
    """Parse and align a reaction SMILES, keeping reagents as condition molecules."""
    reactants, reagents, products = parse_reaction(text)
    reactants, reagents = split_reactants_by_mapping(reactants, reagents, products)
    return align_atoms(reactants, products, condition_mols=order_reagents(reagents))


def tiny_config(task="yield", **values):
    base = {
        "task": task,
        "hidden": 8,
        "encoder_layers": 1,
        "decoder_layers": 1,
        "condition_layers": 1,
        "heads": 2,
        "dropout": 0.0,
        "epochs": 2,
        "batch_size": 2,
        "warmup_epochs": 1,
        "peak_lr": 1e-2,
        "beam_width": 3,
        "max_decode_len": 12,
    }
    base.update(values)
    return build_config(base)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(autouse=True)
def _fresh_fallback_counter():
    reset_rc_fallback_count()
    yield


@pytest.fixture
def bh_rows():
    return ingest(FIXTURES / "buchwald_small.csv", "buchwald_hartwig").rows


@pytest.fixture
def condition_splits():
    rows = ingest(FIXTURES / "uspto_condition_small.csv", "uspto_condition").rows
    return make_splits(rows, kind="column")
