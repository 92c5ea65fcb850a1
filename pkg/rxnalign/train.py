"""
@module train
@description Task models, vocabularies, the optimization loop and checkpoint files
@version 0.1.0
@last_updated 2026-10-18
@status stable

Usage:
    from rxnalign.train import Predictor, save_checkpoint, train_task

    checkpoint = train_task(splits, cfg)
    save_checkpoint(checkpoint, "runs/yield")
    Predictor(checkpoint).predict_value(row)

Two pipelines share the atom-aligned encoder:

    condition_predict / condition_generate
        encoder -> sequence decoder with RC-aware cross-attention
    yield / selectivity
        condition encoder -> encoder with adapters -> pooled regression head

A checkpoint directory holds ``manifest.json`` (format version, config,
vocabulary, target scaling, loss history, tensor index and SHA-256) and
``tensors.bin`` (per tensor: int64 ndim, int64 shape, float64 data, all
little-endian).
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from packaging.version import InvalidVersion, Version
from tqdm import tqdm

from rxnalign import ndiff
from rxnalign.config import TrainConfig, build_config
from rxnalign.data_eval import (
    DatasetRow,
    frequency_baseline,
    group_references,
    regression_metrics,
    topk_report,
)
from rxnalign.decoder import (
    PooledRegressionHead,
    SequenceDecoder,
    beam_search,
    decode_sequence_train,
    log_softmax,
)
from rxnalign.encoder import (
    AtomAlignedEncoder,
    ConditionEncoder,
    EncoderTrace,
    ReactionFeatures,
    featurize_all,
    featurize_reaction,
)
from rxnalign.errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    ShapeError,
    TrainingDivergedError,
    VocabularyError,
)
from rxnalign.layers import Module
from rxnalign.molgraph import tokenize_smiles
from rxnalign.ndiff import Tensor
from rxnalign.rxncore import SLOT_NAMES, ConditionCombo

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "1.0"
MANIFEST_FILE = "manifest.json"
TENSOR_FILE = "tensors.bin"

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
NONE = "<none>"
UNK = "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, NONE, UNK)


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """
    Token table with five leading specials.

    ``level`` is "molecule" (one token per canonical molecule, five-slot
    prediction) or "token" (SMILES tokens of the reagent string, generation).
    The table is built from training labels only; ``<unk>`` stands in for
    held-out labels the model never saw and is never decoded.
    """

    pad = 0
    bos = 1
    eos = 2
    none = 3
    unk = 4

    def __init__(self, tokens: Sequence[str] = (), level: str = "molecule"):
        if level not in ("molecule", "token"):
            raise VocabularyError(f"unknown vocabulary level {level!r}")
        self.level = level
        self.tokens: List[str] = list(dict.fromkeys([*SPECIAL_TOKENS, *tokens]))
        self.index = {token: i for i, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, sequences: Sequence[Sequence[str]], level: str = "molecule") -> "Vocabulary":
        return cls(sorted({token for seq in sequences for token in seq}), level)

    def encode(self, tokens: Sequence[str], unknown_ok: bool = False) -> List[int]:
        """
        Raises:
            VocabularyError: On a token outside the table unless ``unknown_ok``
        """
        if unknown_ok:
            return [self.index.get(token, self.unk) for token in tokens]
        try:
            return [self.index[token] for token in tokens]
        except KeyError as exc:
            raise VocabularyError(f"token {exc.args[0]!r} is not in the vocabulary") from exc

    def decode(self, ids: Sequence[int]) -> List[str]:
        if any(not 0 <= i < len(self.tokens) for i in ids):
            raise VocabularyError(f"token id outside vocabulary of {len(self.tokens)}")
        return [self.tokens[i] for i in ids]

    def to_dict(self) -> Dict:
        return {"level": self.level, "tokens": self.tokens}

    @classmethod
    def from_dict(cls, data: Dict) -> "Vocabulary":
        tokens = list(data.get("tokens", []))
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabularyError("vocabulary does not start with the special tokens")
        return cls(tokens[len(SPECIAL_TOKENS):], data.get("level", "molecule"))


def vocabulary_level(task: str) -> str:
    return "token" if task == "condition_generate" else "molecule"


def target_tokens(row: DatasetRow, task: str) -> List[str]:
    """Output tokens for a condition row, without BOS/EOS."""
    if task == "condition_predict":
        if row.conditions is None:
            raise DatasetError(f"row {row.index} has no condition labels")
        return [slot if slot is not None else NONE for slot in row.conditions.slots()]
    text = ".".join(row.reagents)
    return tokenize_smiles(text) if text else []


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class ConditionModel(Module):
    """Encoder plus autoregressive decoder; reactions enter without conditions."""

    def __init__(self, cfg: TrainConfig, vocab_size: int, rng: np.random.Generator):
        super().__init__()
        self.encoder = self.add_child(
            "encoder",
            AtomAlignedEncoder(
                cfg.hidden, cfg.encoder_layers, cfg.heads, rng, cfg.dropout, cfg.no_fusion
            ),
        )
        self.decoder = self.add_child(
            "decoder",
            SequenceDecoder(
                vocab_size,
                cfg.hidden,
                cfg.decoder_layers,
                cfg.heads,
                rng,
                cfg.dropout,
                cfg.vanilla_xattn,
            ),
        )

    def loss(
        self,
        features: ReactionFeatures,
        target: Sequence[int],
        train: bool = False,
        key: Sequence[int] = (0,),
    ) -> Tensor:
        state = self.encoder(features, None, train, (*key, 0))
        sequence = [Vocabulary.bos, *target, Vocabulary.eos]
        logits = decode_sequence_train(
            self.decoder, state.h_r, state.h_p, features.rc_mask, sequence[:-1], train, (*key, 1)
        )
        return ndiff.cross_entropy(logits, sequence[1:])

    def trace(self, features: ReactionFeatures) -> EncoderTrace:
        trace = EncoderTrace()
        with ndiff.no_grad():
            self.encoder(features, None, False, (0,), trace)
        return trace

    def decode(
        self,
        features: ReactionFeatures,
        beam_width: int,
        k: int,
        max_len: int,
        fixed_length: Optional[int] = None,
    ) -> List[Tuple[List[int], float]]:
        """Beam-search output ids (EOS included) with length-normalized scores."""
        forbidden = [Vocabulary.pad, Vocabulary.bos, Vocabulary.unk]
        if fixed_length is None:
            forbidden.append(Vocabulary.none)
        with ndiff.no_grad():
            state = self.encoder(features)

            def log_prob_fn(prefix: List[int]) -> np.ndarray:
                logits = self.decoder(prefix, state.h_r, state.h_p, features.rc_mask)
                row = log_softmax(logits.data[-1])
                row[forbidden] = -np.inf
                return row

            return beam_search(
                log_prob_fn,
                Vocabulary.bos,
                Vocabulary.eos,
                max(beam_width, k),
                max_len,
                k,
                fixed_length,
            )

    def attention(
        self, features: ReactionFeatures, output: Sequence[int]
    ) -> List[List[np.ndarray]]:
        """Cross-attention weights per decoder layer while reading ``output``."""
        capture: List[List[np.ndarray]] = []
        with ndiff.no_grad():
            state = self.encoder(features)
            inputs = [Vocabulary.bos, *output]
            if inputs[-1] == Vocabulary.eos:
                inputs = inputs[:-1]
            self.decoder(inputs, state.h_r, state.h_p, features.rc_mask, capture=capture)
        return capture


class RegressionModel(Module):
    """Condition encoder, adapter-equipped encoder and a pooled scalar head."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        super().__init__()
        self.encoder = self.add_child(
            "encoder",
            AtomAlignedEncoder(
                cfg.hidden,
                cfg.encoder_layers,
                cfg.heads,
                rng,
                cfg.dropout,
                cfg.no_fusion,
                adapter=True,
            ),
        )
        self.condition_encoder = self.add_child(
            "condition_encoder",
            ConditionEncoder(cfg.hidden, cfg.condition_layers, rng, cfg.dropout),
        )
        self.head = self.add_child(
            "head",
            PooledRegressionHead(cfg.hidden, cfg.heads, rng, cfg.dropout, cfg.vanilla_xattn),
        )

    def forward(
        self,
        features: ReactionFeatures,
        train: bool = False,
        key: Sequence[int] = (0,),
        capture: Optional[List[List[np.ndarray]]] = None,
        trace: Optional[EncoderTrace] = None,
    ) -> Tensor:
        condition = self.condition_encoder(features.conditions, train, (*key, 0))
        state = self.encoder(features, condition, train, (*key, 1), trace)
        return self.head(state.h_r, state.h_p, features.rc_mask, train, (*key, 2), capture)

    def loss(
        self,
        features: ReactionFeatures,
        target: float,
        train: bool = False,
        key: Sequence[int] = (0,),
    ) -> Tensor:
        return ndiff.mse(self.forward(features, train, key), np.array([[target]]))

    def trace(self, features: ReactionFeatures) -> EncoderTrace:
        trace = EncoderTrace()
        with ndiff.no_grad():
            self.forward(features, trace=trace)
        return trace

    def attention(self, features: ReactionFeatures) -> List[List[np.ndarray]]:
        capture: List[List[np.ndarray]] = []
        with ndiff.no_grad():
            self.forward(features, capture=capture)
        return capture


def build_model(cfg: TrainConfig, vocab_size: Optional[int] = None) -> Module:
    """Fresh model for ``cfg.task`` with parameters drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.is_condition_task:
        if not vocab_size:
            raise ConfigError("condition tasks need a vocabulary size")
        return ConditionModel(cfg, vocab_size, rng)
    return RegressionModel(cfg, rng)


def parameter_counts(model: Module) -> Dict[str, int]:
    """Parameter count per top-level sub-module plus the total."""
    counts = {name: child.num_parameters() for name, child in model.named_children()}
    counts["total"] = model.num_parameters()
    return counts


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


def lr_schedule(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """
    Linear warmup to ``peak_lr`` over ``warmup_epochs``, then per-epoch decay.

    Args:
        step: Optimizer steps taken so far
        steps_per_epoch: Batches per epoch
        cfg: Supplies peak_lr, warmup_epochs and decay_gamma

    Returns:
        Learning rate for this step
    """
    if step < 0 or steps_per_epoch <= 0:
        raise ValueError(f"invalid step {step} or steps_per_epoch {steps_per_epoch}")
    warmup = cfg.warmup_epochs * steps_per_epoch
    if step < warmup:
        return cfg.peak_lr * step / warmup
    return cfg.peak_lr * cfg.decay_gamma ** ((step - warmup) // steps_per_epoch)


@dataclass
class TargetScaler:
    """
    Standardization of regression targets by training-split statistics.

    ``unit`` converts raw values to reported units (100 for yields given as
    fractions, otherwise 1).
    """

    mean: float = 0.0
    std: float = 1.0
    unit: float = 1.0

    @classmethod
    def fit(cls, values: Sequence[float], percent: bool = False) -> "TargetScaler":
        values = np.asarray(values, dtype=np.float64)
        unit = 100.0 if percent and np.abs(values).max() <= 1.0 else 1.0
        scaled = values * unit
        std = float(scaled.std())
        return cls(mean=float(scaled.mean()), std=std if std > 0 else 1.0, unit=unit)

    def report(self, raw: float) -> float:
        return raw * self.unit

    def transform(self, raw: float) -> float:
        return (raw * self.unit - self.mean) / self.std

    def inverse(self, standardized: float) -> float:
        return standardized * self.std + self.mean


def make_batches(
    sizes: Sequence[int], batch_size: int, rng: np.random.Generator
) -> List[List[int]]:
    """Group rows of similar atom count, then shuffle the batch order."""
    sizes = np.asarray(sizes)
    order = np.lexsort((rng.random(sizes.shape[0]), sizes))
    batches = [order[i : i + batch_size].tolist() for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: Optional[float]
    lr: float
    grad_norm: float


@dataclass
class Checkpoint:
    config: TrainConfig
    state: Dict[str, np.ndarray]
    vocabulary: Optional[Vocabulary] = None
    scaler: Optional[TargetScaler] = None
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    format_version: str = CHECKPOINT_FORMAT

    def build_model(self) -> Module:
        model = build_model(self.config, len(self.vocabulary) if self.vocabulary else None)
        try:
            model.load_state_dict(self.state)
        except ShapeError as exc:
            raise CheckpointError(f"checkpoint tensors do not fit the model: {exc}") from exc
        return model


def _mean_loss(model: Module, features: Sequence[ReactionFeatures], targets: Sequence) -> float:
    with ndiff.no_grad():
        return float(np.mean([model.loss(f, t).item() for f, t in zip(features, targets)]))


def train_task(
    splits: Dict[str, List[DatasetRow]], cfg: TrainConfig, progress: bool = False
) -> Checkpoint:
    """
    Train the model for ``cfg.task`` and keep the best-validation parameters.

    Sequence tasks minimize token cross-entropy; regression tasks minimize
    MSE on standardized targets. Each batch averages per-reaction losses,
    clips the global gradient norm and takes one Adam step.

    Args:
        splits: Rows per split tag; "train" is required, "valid" selects the
            best epoch (training loss is used when it is empty)
        cfg: Validated configuration
        progress: Show a tqdm bar over epochs

    Returns:
        Checkpoint holding the best parameters and the loss history

    Raises:
        DatasetError: If there are no training rows
        TrainingDivergedError: On a non-finite loss or gradient norm
    """
    train_rows = list(splits.get("train", []))
    valid_rows = list(splits.get("valid", []))
    if not train_rows:
        raise DatasetError("no training rows")

    vocabulary = None
    scaler = None
    if cfg.is_condition_task:
        vocabulary = Vocabulary.build(
            [target_tokens(row, cfg.task) for row in train_rows], vocabulary_level(cfg.task)
        )
        model = build_model(cfg, len(vocabulary))
        unseen = sum(
            token not in vocabulary.index
            for row in valid_rows
            for token in target_tokens(row, cfg.task)
        )
        if unseen:
            log.warning("%d validation label tokens are not in the training vocabulary", unseen)

        def encode_targets(rows):
            return [vocabulary.encode(target_tokens(row, cfg.task), True) for row in rows]

    else:
        scaler = TargetScaler.fit([row.target for row in train_rows], percent=cfg.task == "yield")
        model = build_model(cfg)

        def encode_targets(rows):
            return [scaler.transform(row.target) for row in rows]

    log.info("model parameters: %s", parameter_counts(model))
    train_features = featurize_all([row.aligned for row in train_rows], cfg.workers)
    valid_features = featurize_all([row.aligned for row in valid_rows], cfg.workers)
    train_targets = encode_targets(train_rows)
    valid_targets = encode_targets(valid_rows)

    params = model.parameters()
    adam = ndiff.AdamState()
    batch_rng = np.random.default_rng([cfg.seed, 1])
    steps_per_epoch = math.ceil(len(train_rows) / cfg.batch_size)
    sizes = [f.n + f.m for f in train_features]
    history: List[EpochRecord] = []
    best_loss = math.inf
    best_state = model.state_dict()
    best_epoch = -1
    step = 0

    for epoch in tqdm(range(cfg.epochs), desc=cfg.task, disable=not progress):
        losses, norms = [], []
        for batch in make_batches(sizes, cfg.batch_size, batch_rng):
            lr = lr_schedule(step, steps_per_epoch, cfg)
            model.zero_grad()
            batch_loss = 0.0
            for i in batch:
                loss = model.loss(train_features[i], train_targets[i], True, (cfg.seed, step, i))
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite loss {value} at epoch {epoch}, step {step}, "
                        f"row {train_rows[i].index}"
                    )
                ndiff.backward(ndiff.scale(loss, 1.0 / len(batch)))
                batch_loss += value
            grads = {name: p.grad for name, p in params.items() if p.grad is not None}
            norm = ndiff.clip_grad_norm(grads, cfg.grad_clip)
            if not math.isfinite(norm):
                raise TrainingDivergedError(
                    f"non-finite gradient norm at epoch {epoch}, step {step}"
                )
            adam = ndiff.adam_step(params, grads, adam, lr)
            losses.append(batch_loss / len(batch))
            norms.append(norm)
            step += 1

        valid_loss = _mean_loss(model, valid_features, valid_targets) if valid_rows else None
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            valid_loss=valid_loss,
            lr=lr,
            grad_norm=float(np.max(norms)),
        )
        history.append(record)
        log.info(
            "epoch %d: train loss %.5f, valid loss %s, lr %.3g",
            epoch,
            record.train_loss,
            "-" if valid_loss is None else f"{valid_loss:.5f}",
            lr,
        )
        monitored = record.train_loss if valid_loss is None else valid_loss
        if monitored < best_loss:
            best_loss = monitored
            best_state = model.state_dict()
            best_epoch = epoch
            log.info("new best parameters at epoch %d (%.5f)", epoch, monitored)

    return Checkpoint(
        config=cfg,
        state=best_state,
        vocabulary=vocabulary,
        scaler=scaler,
        history=history,
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------


def save_checkpoint(checkpoint: Checkpoint, directory: Union[str, Path]) -> Path:
    """Write manifest.json and tensors.bin into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = [], [], 0
    for name in sorted(checkpoint.state):
        array = np.ascontiguousarray(checkpoint.state[name], dtype="<f8")
        chunk = np.array([array.ndim, *array.shape], dtype="<i8").tobytes() + array.tobytes()
        index.append({"name": name, "offset": offset, "shape": list(array.shape)})
        chunks.append(chunk)
        offset += len(chunk)
    payload = b"".join(chunks)
    manifest = {
        "format_version": checkpoint.format_version,
        "task": checkpoint.config.task,
        "config": checkpoint.config.to_dict(),
        "vocabulary": checkpoint.vocabulary.to_dict() if checkpoint.vocabulary else None,
        "target_scaler": asdict(checkpoint.scaler) if checkpoint.scaler else None,
        "history": [asdict(record) for record in checkpoint.history],
        "best_epoch": checkpoint.best_epoch,
        "tensors": index,
        "tensor_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    (directory / TENSOR_FILE).write_bytes(payload)
    with open(directory / MANIFEST_FILE, "w") as f:
        json.dump(manifest, f, indent=2)
    return directory


def _check_format(value) -> None:
    try:
        found = Version(str(value))
    except InvalidVersion as exc:
        raise CheckpointError(f"invalid checkpoint format version {value!r}") from exc
    supported = Version(CHECKPOINT_FORMAT)
    if found.major != supported.major or found > supported:
        raise CheckpointError(f"checkpoint format {found} is not readable (supported {supported})")


def _read_tensors(payload: bytes, index: Sequence[Dict]) -> Dict[str, np.ndarray]:
    state = {}
    for entry in index:
        offset = int(entry["offset"])
        ndim = int(np.frombuffer(payload, dtype="<i8", count=1, offset=offset)[0])
        shape = tuple(
            int(x) for x in np.frombuffer(payload, dtype="<i8", count=ndim, offset=offset + 8)
        )
        if list(shape) != list(entry["shape"]):
            raise CheckpointError(f"{entry['name']}: header shape {shape} != {entry['shape']}")
        count = int(np.prod(shape, dtype=np.int64))
        start = offset + 8 * (ndim + 1)
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        state[entry["name"]] = data.astype(np.float64).reshape(shape)
    return state


def load_checkpoint(directory: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint directory written by ``save_checkpoint``.

    Raises:
        CheckpointError: Missing files, unsupported format version, truncated
            or corrupted tensor data
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    tensor_path = directory / TENSOR_FILE
    if not manifest_path.exists() or not tensor_path.exists():
        raise CheckpointError(f"{directory} is not a checkpoint directory")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable manifest {manifest_path}: {exc}") from exc
    _check_format(manifest.get("format_version"))

    payload = tensor_path.read_bytes()
    if len(payload) != manifest.get("tensor_bytes"):
        raise CheckpointError(
            f"truncated tensor blob: {len(payload)} bytes, expected {manifest.get('tensor_bytes')}"
        )
    if hashlib.sha256(payload).hexdigest() != manifest.get("sha256"):
        raise CheckpointError("tensor blob checksum mismatch")
    try:
        state = _read_tensors(payload, manifest["tensors"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed tensor index: {exc}") from exc

    try:
        config = build_config(manifest["config"])
    except (KeyError, ConfigError) as exc:
        raise CheckpointError(f"invalid stored config: {exc}") from exc
    vocabulary = manifest.get("vocabulary")
    scaler = manifest.get("target_scaler")
    return Checkpoint(
        config=config,
        state=state,
        vocabulary=Vocabulary.from_dict(vocabulary) if vocabulary else None,
        scaler=TargetScaler(**scaler) if scaler else None,
        history=[EpochRecord(**record) for record in manifest.get("history", [])],
        best_epoch=manifest.get("best_epoch", -1),
        format_version=manifest["format_version"],
    )


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


Prediction = Tuple[Union[ConditionCombo, str], float]


class Predictor:
    """Inference wrapper around a checkpoint."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.config = checkpoint.config
        self.vocabulary = checkpoint.vocabulary
        self.scaler = checkpoint.scaler
        self.model = checkpoint.build_model()

    def _decode(self, features: ReactionFeatures, k: int) -> List[Tuple[List[int], float]]:
        if self.config.task == "condition_predict":
            return self.model.decode(
                features, self.config.beam_width, k, len(SLOT_NAMES) + 1, len(SLOT_NAMES)
            )
        return self.model.decode(features, self.config.beam_width, k, self.config.max_decode_len)

    def _to_prediction(self, ids: Sequence[int]) -> Union[ConditionCombo, str]:
        tokens = self.vocabulary.decode([i for i in ids if i != Vocabulary.eos])
        if self.config.task == "condition_predict":
            return ConditionCombo.from_slots([None if t == NONE else t for t in tokens])
        return "".join(tokens)

    def predict_conditions(self, row: DatasetRow, k: int = 10) -> List[Prediction]:
        """Top-k condition combinations (or reagent strings) with their scores."""
        if not self.config.is_condition_task:
            raise ConfigError(f"task {self.config.task} does not predict conditions")
        features = featurize_reaction(row.aligned)
        return [(self._to_prediction(ids), score) for ids, score in self._decode(features, k)]

    def predict_value(self, row: DatasetRow) -> float:
        """Yield (0-100) or ΔΔG‡ (kcal/mol) in reported units."""
        if self.config.is_condition_task:
            raise ConfigError(f"task {self.config.task} does not predict a scalar")
        with ndiff.no_grad():
            value = self.model.forward(featurize_reaction(row.aligned)).item()
        return self.scaler.inverse(value)

    def embed(self, row: DatasetRow) -> EncoderTrace:
        return self.model.trace(featurize_reaction(row.aligned))

    def attention(self, row: DatasetRow) -> List[List[np.ndarray]]:
        """
        Captured RC-aware cross-attention weights.

        Returns:
            One entry per cross-attention layer, each a list of (queries, n + m)
            arrays, one per head. Condition tasks read back the top prediction.
        """
        features = featurize_reaction(row.aligned)
        if self.config.is_condition_task:
            best = self._decode(features, 1)
            return self.model.attention(features, best[0][0] if best else [])
        return self.model.attention(features)

    def normal_heads(self) -> int:
        return math.ceil(self.config.heads / 2)


def evaluate_task(
    predictor: Predictor,
    rows: Sequence[DatasetRow],
    ks: Sequence[int] = (1, 3, 5, 10),
    train_rows: Optional[Sequence[DatasetRow]] = None,
) -> Dict:
    """
    Metric report for ``rows``.

    Regression tasks report MAE, RMSE and R² in reported units. Condition
    tasks report top-k accuracies per canonical reaction (all recorded
    condition sets of a reaction are references); with ``train_rows`` the
    majority-combination baseline is reported alongside.
    """
    if not rows:
        raise DatasetError("nothing to evaluate")
    cfg = predictor.config
    if cfg.is_regression_task:
        preds = [predictor.predict_value(row) for row in rows]
        targets = [predictor.scaler.report(row.target) for row in rows]
        metrics = regression_metrics(preds, targets).to_dict()
        return {"task": cfg.task, "count": len(rows), **metrics}

    mode = "slots" if cfg.task == "condition_predict" else "generation"
    groups = group_references(rows, mode)
    first = {}
    for row in rows:
        first.setdefault(row.group, row)
    k = max(ks)
    predictions = [
        [combo for combo, _ in predictor.predict_conditions(first[key], k)] for key in groups
    ]
    references = list(groups.values())
    report = {
        "task": cfg.task,
        "count": len(groups),
        **topk_report(predictions, references, ks, mode),
    }
    if train_rows:
        labels = [row.conditions if mode == "slots" else row.reagents for row in train_rows]
        baseline = frequency_baseline(labels, k)
        report["baseline"] = topk_report([baseline] * len(references), references, ks, mode)[
            "overall"
        ]
    return report
