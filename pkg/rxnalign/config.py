"""
@module config
@description Training configuration: per-task defaults, YAML loading and validation
@version 0.1.0
@last_updated 2026-10-18
@status stable

Usage:
    from rxnalign.config import load_config

    cfg = load_config("configs/buchwald_hartwig.yaml", overrides={"seed": 3})

A config file is a flat YAML mapping of ``TrainConfig`` fields plus an
optional ``preset`` naming one of ``PRESETS``. Values are resolved in
order: task defaults, preset, file, overrides.
"""

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from rxnalign.errors import ConfigError

DATA_ROOT_ENV = "RXNALIGN_DATA_ROOT"

TASKS = ("condition_predict", "condition_generate", "yield", "selectivity")
SCHEMAS = ("uspto_condition", "uspto_500mt", "buchwald_hartwig", "selectivity")

# Published hyper-parameters; epoch counts are desk-scale guesses.
TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "condition_predict": {
        "hidden": 512,
        "encoder_layers": 6,
        "decoder_layers": 6,
        "heads": 8,
        "dropout": 0.1,
        "peak_lr": 1.25e-4,
        "epochs": 100,
        "schema": "uspto_condition",
    },
    "condition_generate": {
        "hidden": 512,
        "encoder_layers": 6,
        "decoder_layers": 6,
        "heads": 8,
        "dropout": 0.1,
        "peak_lr": 1.25e-4,
        "epochs": 100,
        "schema": "uspto_500mt",
    },
    "yield": {
        "hidden": 128,
        "encoder_layers": 3,
        "heads": 8,
        "dropout": 0.1,
        "peak_lr": 1e-4,
        "epochs": 150,
        "schema": "buchwald_hartwig",
    },
    "selectivity": {
        "hidden": 128,
        "encoder_layers": 5,
        "heads": 8,
        "dropout": 0.0,
        "peak_lr": 5e-4,
        "epochs": 150,
        "schema": "selectivity",
    },
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "ch_functionalization": {"task": "selectivity", "encoder_layers": 5, "peak_lr": 5e-4},
    "thiol_addition": {"task": "selectivity", "encoder_layers": 3, "peak_lr": 5e-5},
}


@dataclass
class TrainConfig:
    """
    Everything needed to reproduce one training run.

    Attributes:
        task: condition_predict, condition_generate, yield or selectivity
        data_path: CSV file, relative paths resolve against RXNALIGN_DATA_ROOT
        schema: Column layout of data_path (see data_eval.SCHEMAS)
        split: "random", "column" or "file"
        split_fractions: (train, valid, test) or (train, test) fractions for random splits
        split_file: CSV with a split tag per row (split == "file")
        no_fusion: Replace pairwise fusion by per-side feed-forwards
        vanilla_xattn: Use unrestricted cross-attention in every head
    """

    task: str = "yield"
    data_path: str = ""
    schema: str = ""
    hidden: int = 128
    encoder_layers: int = 3
    decoder_layers: int = 6
    condition_layers: int = 3
    heads: int = 8
    dropout: float = 0.1
    peak_lr: float = 1e-4
    warmup_epochs: int = 2
    decay_gamma: float = 0.99
    batch_size: int = 32
    epochs: int = 100
    grad_clip: float = 5.0
    seed: int = 0
    no_fusion: bool = False
    vanilla_xattn: bool = False
    beam_width: int = 10
    max_decode_len: int = 200
    split: str = "random"
    split_fractions: tuple = (0.7, 0.1, 0.2)
    split_file: str = ""
    temperature: float = 298.15
    workers: int = 1
    out_dir: str = "runs"
    preset: str = ""

    @property
    def is_condition_task(self) -> bool:
        return self.task in ("condition_predict", "condition_generate")

    @property
    def is_regression_task(self) -> bool:
        return self.task in ("yield", "selectivity")

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["split_fractions"] = list(self.split_fractions)
        return data

    def validate(self) -> "TrainConfig":
        """
        Raises:
            ConfigError: On an unknown task/schema or out-of-range values
        """
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.schema not in SCHEMAS:
            raise ConfigError(f"unknown schema {self.schema!r}; expected one of {SCHEMAS}")
        for name in (
            "hidden",
            "encoder_layers",
            "heads",
            "batch_size",
            "epochs",
            "beam_width",
            "max_decode_len",
            "workers",
            "condition_layers",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.is_condition_task and self.decoder_layers <= 0:
            raise ConfigError("condition tasks need at least one decoder layer")
        if self.hidden % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.peak_lr <= 0 or self.warmup_epochs < 0 or not 0 < self.decay_gamma <= 1:
            raise ConfigError("peak_lr > 0, warmup_epochs >= 0 and 0 < decay_gamma <= 1 required")
        if self.split not in ("random", "column", "file"):
            raise ConfigError(f"unknown split kind {self.split!r}")
        if len(self.split_fractions) not in (2, 3) or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(
                f"split_fractions must be two or three values summing to 1: {self.split_fractions}"
            )
        if self.split == "file" and not self.split_file:
            raise ConfigError("split: file requires split_file")
        return self


def build_config(values: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """Merge task defaults, preset and explicit values into a validated config."""
    values = dict(values or {})
    preset_name = values.get("preset", "")
    preset = {}
    if preset_name:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}; expected one of {sorted(PRESETS)}")
        preset = PRESETS[preset_name]
    task = values.get("task", preset.get("task", TrainConfig.task))
    if task not in TASK_DEFAULTS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")

    merged: Dict[str, Any] = {**TASK_DEFAULTS[task], **preset, **values, "task": task}
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "split_fractions" in merged:
        merged["split_fractions"] = tuple(float(x) for x in merged["split_fractions"])
    try:
        return TrainConfig(**merged).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(
    path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None
) -> TrainConfig:
    """
    Load a YAML config file.

    Args:
        path: YAML file
        overrides: Values taking precedence over the file (e.g. --seed, --out)

    Returns:
        Validated TrainConfig

    Raises:
        ConfigError: Missing file, malformed YAML or invalid values
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            values = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must contain a mapping")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def resolve_data_path(path: Union[str, Path]) -> Path:
    """Resolve relative data paths against RXNALIGN_DATA_ROOT when it is set."""
    path = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if path.is_absolute() or not root:
        return path
    return Path(root) / path
