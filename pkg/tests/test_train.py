import json
import math

import numpy as np
import pytest
from conftest import FIXTURES, tiny_config
from numpy.testing import assert_array_equal

from rxnalign import ndiff
from rxnalign.data_eval import ingest, ingest_records, make_splits
from rxnalign.encoder import featurize_reaction
from rxnalign.errors import CheckpointError, ConfigError, DatasetError, VocabularyError
from rxnalign.molgraph import canonicalize_smiles
from rxnalign.rxncore import ConditionCombo
from rxnalign.train import (
    MANIFEST_FILE,
    TENSOR_FILE,
    Predictor,
    TargetScaler,
    Vocabulary,
    build_model,
    evaluate_task,
    load_checkpoint,
    lr_schedule,
    make_batches,
    parameter_counts,
    save_checkpoint,
    target_tokens,
    train_task,
)


@pytest.fixture
def bh_splits(bh_rows):
    return {"train": bh_rows[:6], "valid": bh_rows[6:], "test": bh_rows[6:]}


NUCLEOPHILES = {"O": ("OH2", "OH"), "N": ("NH3", "NH2"), "S": ("SH2", "SH")}
SOLVENTS = {"O": "O", "N": "CO", "S": "CCO"}
REAGENTS = {"Cl": "CC(=O)O", "Br": "CCN(CC)CC", "I": ""}
YIELD_BASE = {"O": 30.0, "N": 50.0, "S": 70.0}
YIELD_STEP = {"Cl": 0.0, "Br": 8.0, "I": 16.0}


def _alkyl(length):
    return "[CH3:1]" + "".join(f"[CH2:{i}]" for i in range(2, length + 1))


def _substitution_series(count=50):
    """Distinct mapped S_N2 reactions whose labels depend on nucleophile and halide only."""
    records = []
    for length in range(1, 7):
        for nucleophile, (before, after) in NUCLEOPHILES.items():
            for halogen in REAGENTS:
                chain = _alkyl(length)
                records.append(
                    {
                        "reaction": f"{chain}[{halogen}:{length + 1}].[{before}:{length + 2}]"
                        f">>{chain}[{after}:{length + 2}]",
                        "catalyst": "",
                        "solvent1": SOLVENTS[nucleophile],
                        "solvent2": "",
                        "reagent1": REAGENTS[halogen],
                        "reagent2": "",
                        "yield": str(YIELD_BASE[nucleophile] + YIELD_STEP[halogen]),
                    }
                )
    return records[:count]


@pytest.fixture(scope="module")
def series_condition_run():
    result = ingest_records(_substitution_series(), "uspto_condition")
    assert len(result.rows) == 50 and not result.quarantine
    cfg = tiny_config(
        "condition_predict",
        hidden=32,
        encoder_layers=2,
        decoder_layers=2,
        heads=4,
        epochs=150,
        batch_size=5,
        warmup_epochs=2,
        peak_lr=2e-3,
        beam_width=5,
    )
    return result.rows, train_task({"train": result.rows}, cfg)


@pytest.fixture(scope="module")
def yield_checkpoint():
    rows = ingest(FIXTURES / "buchwald_small.csv", "buchwald_hartwig").rows
    return train_task({"train": rows[:6], "valid": rows[6:]}, tiny_config("yield", epochs=1))


def test_vocabulary_specials_come_first():
    vocab = Vocabulary.build([["CCO", "O"], ["O", "Cl[Pd]Cl"]])
    assert vocab.tokens[:5] == ["<pad>", "<bos>", "<eos>", "<none>", "<unk>"]
    assert (vocab.pad, vocab.bos, vocab.eos, vocab.none, vocab.unk) == (0, 1, 2, 3, 4)
    assert vocab.decode(vocab.encode(["O", "CCO"])) == ["O", "CCO"]
    assert len(vocab) == 8


def test_vocabulary_errors():
    vocab = Vocabulary.build([["O"]])
    with pytest.raises(VocabularyError):
        vocab.encode(["CCN"])
    assert vocab.encode(["O", "CCN"], unknown_ok=True) == [vocab.index["O"], vocab.unk]
    with pytest.raises(VocabularyError):
        vocab.decode([99])
    with pytest.raises(VocabularyError):
        Vocabulary.from_dict({"tokens": ["O", "<pad>"]})
    assert Vocabulary.from_dict(vocab.to_dict()).tokens == vocab.tokens


def test_target_tokens(condition_splits):
    row = condition_splits["train"][0]
    tokens = target_tokens(row, "condition_predict")
    assert len(tokens) == 5
    assert tokens[0] == "<none>"
    assert tokens[1] == canonicalize_smiles("ClCCl")


def test_lr_schedule_warmup_then_decay():
    cfg = tiny_config(peak_lr=1e-3, warmup_epochs=2, decay_gamma=0.5)
    assert lr_schedule(0, 10, cfg) == 0.0
    assert lr_schedule(10, 10, cfg) == pytest.approx(5e-4)
    assert lr_schedule(20, 10, cfg) == pytest.approx(1e-3)
    assert lr_schedule(29, 10, cfg) == pytest.approx(1e-3)
    assert lr_schedule(30, 10, cfg) == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        lr_schedule(-1, 10, cfg)


def test_target_scaler_reports_percent():
    scaler = TargetScaler.fit([0.2, 0.4, 0.6], percent=True)
    assert scaler.unit == 100.0
    assert scaler.mean == pytest.approx(40.0)
    assert scaler.inverse(scaler.transform(0.6)) == pytest.approx(60.0)
    assert TargetScaler.fit([20.0, 40.0], percent=True).unit == 1.0
    assert TargetScaler.fit([1.5, 1.5]).std == 1.0


def test_make_batches_cover_every_row_once():
    sizes = [5, 9, 3, 3, 12, 7, 5, 8, 1, 4, 6]
    batches = make_batches(sizes, 3, np.random.default_rng(0))
    flat = sorted(i for batch in batches for i in batch)
    assert flat == list(range(len(sizes)))
    assert all(len(batch) <= 3 for batch in batches)


def test_fusion_parameter_difference():
    d, layers = 16, 2
    fused = parameter_counts(build_model(tiny_config(hidden=d, encoder_layers=layers)))
    split = parameter_counts(
        build_model(tiny_config(hidden=d, encoder_layers=layers, no_fusion=True))
    )
    assert fused["encoder"] - split["encoder"] == layers * (6 * d * d + 2 * d)
    assert fused["total"] == sum(v for k, v in fused.items() if k != "total")


def test_vanilla_cross_attention_adds_no_parameters():
    plain = parameter_counts(build_model(tiny_config()))
    vanilla = parameter_counts(build_model(tiny_config(vanilla_xattn=True)))
    assert plain == vanilla


def test_condition_model_needs_vocabulary():
    with pytest.raises(ConfigError):
        build_model(tiny_config("condition_predict"))


def test_training_is_deterministic(bh_splits):
    cfg = tiny_config("yield", dropout=0.1)
    first = train_task(bh_splits, cfg)
    second = train_task(bh_splits, cfg)
    assert first.history == second.history
    assert first.best_epoch == second.best_epoch
    for name, value in first.state.items():
        assert_array_equal(value, second.state[name])
    assert all(math.isfinite(r.grad_norm) and math.isfinite(r.train_loss) for r in first.history)
    assert len(first.history) == cfg.epochs


def test_training_without_rows_fails():
    with pytest.raises(DatasetError):
        train_task({"train": []}, tiny_config())


def test_checkpoint_round_trip(tmp_path, yield_checkpoint, bh_rows):
    save_checkpoint(yield_checkpoint, tmp_path / "ckpt")
    loaded = load_checkpoint(tmp_path / "ckpt")
    assert sorted(loaded.state) == sorted(yield_checkpoint.state)
    for name, value in yield_checkpoint.state.items():
        assert_array_equal(loaded.state[name], value)
    assert loaded.config == yield_checkpoint.config
    assert loaded.scaler == yield_checkpoint.scaler
    assert loaded.history == yield_checkpoint.history

    before = Predictor(yield_checkpoint).predict_value(bh_rows[0])
    after = Predictor(loaded).predict_value(bh_rows[0])
    assert before == after


def test_corrupted_tensor_blob_is_rejected(tmp_path, yield_checkpoint):
    directory = save_checkpoint(yield_checkpoint, tmp_path / "ckpt")
    blob = bytearray((directory / TENSOR_FILE).read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    (directory / TENSOR_FILE).write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum mismatch"):
        load_checkpoint(directory)


def test_truncated_tensor_blob_is_rejected(tmp_path, yield_checkpoint):
    directory = save_checkpoint(yield_checkpoint, tmp_path / "ckpt")
    blob = (directory / TENSOR_FILE).read_bytes()
    (directory / TENSOR_FILE).write_bytes(blob[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(directory)


def test_future_format_is_rejected(tmp_path, yield_checkpoint):
    directory = save_checkpoint(yield_checkpoint, tmp_path / "ckpt")
    manifest = json.loads((directory / MANIFEST_FILE).read_text())
    manifest["format_version"] = "2.0"
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="not readable"):
        load_checkpoint(directory)


def test_missing_checkpoint_directory(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nowhere")


def test_regression_predictor_refuses_condition_queries(yield_checkpoint, bh_rows):
    predictor = Predictor(yield_checkpoint)
    with pytest.raises(ConfigError):
        predictor.predict_conditions(bh_rows[0])
    assert math.isfinite(predictor.predict_value(bh_rows[0]))
    layers = predictor.attention(bh_rows[0])
    assert len(layers) == 1 and len(layers[0]) == 2
    assert layers[0][0].shape == (1, bh_rows[0].aligned.n + bh_rows[0].aligned.m)


def test_yield_evaluation_report(yield_checkpoint, bh_rows):
    report = evaluate_task(Predictor(yield_checkpoint), bh_rows[6:])
    assert report["task"] == "yield" and report["count"] == 2
    assert {"mae", "rmse", "r2"} <= set(report)


def test_condition_prediction(condition_splits):
    checkpoint = train_task(condition_splits, tiny_config("condition_predict"))
    seen = {
        token
        for row in condition_splits["train"]
        for token in target_tokens(row, "condition_predict")
    }
    assert set(checkpoint.vocabulary.tokens[5:]) == seen - {"<none>"}
    predictor = Predictor(checkpoint)
    predictions = predictor.predict_conditions(condition_splits["test"][0], k=3)
    assert 1 <= len(predictions) <= 3
    assert all(isinstance(combo, ConditionCombo) for combo, _ in predictions)
    scores = [score for _, score in predictions]
    assert scores == sorted(scores, reverse=True)

    report = evaluate_task(
        predictor, condition_splits["test"], ks=(1, 3), train_rows=condition_splits["train"]
    )
    assert set(report["overall"]) == {"top1", "top3"}
    assert report["overall"]["top1"] <= report["overall"]["top3"]
    assert "baseline" in report


def test_reagent_generation(tmp_path):
    source = tmp_path / "mt.csv"
    source.write_text(
        "reaction,split\n"
        "[CH3:1][C:2](=[O:3])[Cl:4].[NH3:5].CCN(CC)CC>>[CH3:1][C:2](=[O:3])[NH2:5],train\n"
        "[CH3:1][CH2:2][Br:3].[OH2:4]>CCO>[CH3:1][CH2:2][OH:4],train\n"
        "[CH3:1][CH2:2][CH2:3][Br:4].[OH2:5]>CCO>[CH3:1][CH2:2][CH2:3][OH:5],test\n"
    )
    splits = make_splits(ingest(source, "uspto_500mt").rows, kind="column")
    checkpoint = train_task(splits, tiny_config("condition_generate"))
    assert checkpoint.vocabulary.level == "token"
    predictions = Predictor(checkpoint).predict_conditions(splits["test"][0], k=2)
    assert all(isinstance(text, str) for text, _ in predictions)


@pytest.mark.slow
def test_regression_loss_decreases(bh_rows):
    cfg = tiny_config("yield", hidden=16, epochs=40, peak_lr=3e-3)
    checkpoint = train_task({"train": bh_rows}, cfg)
    losses = [record.train_loss for record in checkpoint.history]
    assert min(losses[-5:]) < losses[0]


@pytest.mark.parametrize("flag", ["no_fusion", "vanilla_xattn"])
def test_ablations_train_to_completion(flag, bh_splits, condition_splits):
    for task, splits in (("yield", bh_splits), ("condition_predict", condition_splits)):
        cfg = tiny_config(task, **{flag: True})
        checkpoint = train_task(splits, cfg)
        assert getattr(checkpoint.config, flag)
        assert len(checkpoint.history) == cfg.epochs and checkpoint.best_epoch >= 0
        assert all(math.isfinite(r.train_loss) for r in checkpoint.history)
        report = evaluate_task(Predictor(checkpoint), splits["test"])
        assert report["count"] >= 1


@pytest.mark.slow
def test_condition_overfit_beats_majority_baseline(series_condition_run):
    rows, checkpoint = series_condition_run
    report = evaluate_task(Predictor(checkpoint), rows, ks=(1, 3), train_rows=rows)
    assert report["count"] == 50
    assert report["overall"]["top1"] >= 0.95
    assert report["overall"]["top1"] <= report["overall"]["top3"]
    assert report["overall"]["top1"] >= 2 * report["baseline"]["top1"]


@pytest.mark.slow
def test_decoder_overfit_token_accuracy(series_condition_run):
    rows, checkpoint = series_condition_run
    model = checkpoint.build_model()
    vocab = checkpoint.vocabulary
    hits = total = 0
    with ndiff.no_grad():
        for row in rows:
            features = featurize_reaction(row.aligned)
            target = vocab.encode(target_tokens(row, "condition_predict"))
            sequence = [vocab.bos, *target, vocab.eos]
            state = model.encoder(features)
            logits = model.decoder(sequence[:-1], state.h_r, state.h_p, features.rc_mask)
            hits += int((logits.data.argmax(axis=1) == np.array(sequence[1:])).sum())
            total += len(sequence) - 1
    assert hits / total >= 0.99


@pytest.mark.slow
def test_yield_overfit_mae():
    result = ingest_records(_substitution_series(), "buchwald_hartwig")
    assert len(result.rows) == 50
    cfg = tiny_config(
        "yield",
        hidden=32,
        encoder_layers=2,
        heads=4,
        epochs=300,
        batch_size=5,
        warmup_epochs=2,
        peak_lr=2e-3,
    )
    checkpoint = train_task({"train": result.rows}, cfg)
    report = evaluate_task(Predictor(checkpoint), result.rows)
    assert report["mae"] < 1.0
