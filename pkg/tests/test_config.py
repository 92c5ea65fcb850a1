from pathlib import Path

import pytest
import yaml

from rxnalign.config import DATA_ROOT_ENV, build_config, load_config, resolve_data_path
from rxnalign.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.hidden % cfg.heads == 0
    assert cfg.data_path


@pytest.mark.parametrize(
    "name, layers, lr, dropout",
    [
        ("ch_functionalization", 5, 5e-4, 0.0),
        ("thiol_addition", 3, 5e-5, 0.0),
    ],
)
def test_selectivity_presets(name, layers, lr, dropout):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    assert cfg.task == "selectivity" and cfg.schema == "selectivity"
    assert (cfg.encoder_layers, cfg.peak_lr, cfg.dropout, cfg.hidden) == (layers, lr, dropout, 128)


def test_task_defaults():
    condition = build_config({"task": "condition_predict"})
    assert (condition.hidden, condition.encoder_layers, condition.decoder_layers) == (512, 6, 6)
    assert condition.peak_lr == 1.25e-4 and condition.schema == "uspto_condition"
    yield_cfg = build_config({"task": "yield"})
    assert (yield_cfg.hidden, yield_cfg.encoder_layers, yield_cfg.dropout) == (128, 3, 0.1)
    assert build_config({"task": "condition_generate"}).schema == "uspto_500mt"


def test_overrides_take_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"task": "yield", "seed": 1, "out_dir": "a"}))
    cfg = load_config(path, {"seed": 7, "out_dir": None})
    assert cfg.seed == 7 and cfg.out_dir == "a"
    assert cfg.to_dict()["split_fractions"] == [0.7, 0.1, 0.2]


@pytest.mark.parametrize(
    "values",
    [
        {"task": "yield", "learning_rate": 0.1},
        {"task": "translation"},
        {"preset": "unknown"},
        {"task": "yield", "hidden": 10, "heads": 4},
        {"task": "yield", "dropout": 1.0},
        {"task": "yield", "epochs": 0},
        {"task": "yield", "decay_gamma": 1.5},
        {"task": "yield", "split": "file"},
        {"task": "yield", "split": "scaffold"},
        {"task": "yield", "split_fractions": [0.5, 0.5, 0.5]},
        {"task": "condition_predict", "decoder_layers": 0},
        {"task": "yield", "condition_layers": 0},
        {"task": "yield", "split_fractions": [0.6, 0.3]},
        {"task": "yield", "split_fractions": [1.0]},
        {"task": "yield", "schema": "csv"},
    ],
)
def test_invalid_values_raise(values):
    with pytest.raises(ConfigError):
        build_config(values)


@pytest.mark.parametrize("fractions", [[0.7, 0.3], [0.5, 0.25, 0.25]])
def test_two_or_three_split_fractions(fractions):
    cfg = build_config({"task": "yield", "split_fractions": fractions})
    assert cfg.split_fractions == tuple(fractions)
    assert cfg.to_dict()["split_fractions"] == fractions


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("task: [yield\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- yield\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(listing)


def test_data_root(monkeypatch, tmp_path):
    monkeypatch.delenv(DATA_ROOT_ENV, raising=False)
    assert resolve_data_path("bh.csv") == Path("bh.csv")
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path))
    assert resolve_data_path("bh.csv") == tmp_path / "bh.csv"
    assert resolve_data_path(tmp_path / "x.csv") == tmp_path / "x.csv"
