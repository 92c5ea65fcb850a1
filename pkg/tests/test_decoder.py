import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rxnalign.decoder import (
    PooledRegressionHead,
    RCCrossAttention,
    SequenceDecoder,
    beam_search,
    log_softmax,
    pooled_regression,
    positional_encoding,
    rc_cross_attention,
    rc_fallback_count,
)
from rxnalign import ndiff
from rxnalign.errors import ShapeError, VocabularyError
from rxnalign.gradcheck import check_gradients
from rxnalign.ndiff import Tensor

BOS, EOS, A, B = 0, 1, 2, 3


def _memory(seed=0, n=4, m=3, d=10):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(n, d))), Tensor(rng.normal(size=(m, d)))


def _toy_log_probs(prefix):
    rng = np.random.default_rng([*prefix, 7])
    row = log_softmax(rng.normal(size=4) * 2.0)
    row[BOS] = -np.inf
    return row


def _exhaustive(max_len):
    results = []
    for length in range(1, max_len + 1):
        for body in itertools.product((EOS, A, B), repeat=length):
            if EOS in body[:-1]:
                continue
            if length < max_len and body[-1] != EOS:
                continue
            prefix, score = [BOS], 0.0
            for token in body:
                score += float(_toy_log_probs(prefix)[token])
                prefix.append(token)
            results.append((list(body), score / length))
    return sorted(results, key=lambda c: (-c[1], c[0]))


def _greedy(max_len):
    prefix, score = [BOS], 0.0
    while len(prefix) - 1 < max_len:
        row = _toy_log_probs(prefix)
        token = int(np.argmax(row))
        score += float(row[token])
        prefix.append(token)
        if token == EOS:
            break
    return prefix[1:], score / (len(prefix) - 1)


def test_restricted_heads_only_see_reaction_centers():
    h_r, h_p = _memory()
    rc_mask = np.array([True, False, True, False, False, True, False])
    attention = RCCrossAttention(10, 5, np.random.default_rng(1))
    assert attention.normal_heads == 3
    query = Tensor(np.random.default_rng(2).normal(size=(2, 10)))
    _, weights = rc_cross_attention(query, h_r, h_p, rc_mask, attention)
    assert len(weights) == 5
    for head in weights[:3]:
        assert (head > 0).all()
    for head in weights[3:]:
        assert_array_equal(head[:, ~rc_mask], 0.0)
        assert_allclose(head[:, rc_mask].sum(axis=1), 1.0, atol=1e-12)
    assert rc_fallback_count() == 0


def test_empty_center_falls_back_to_full_attention():
    h_r, h_p = _memory()
    attention = RCCrossAttention(10, 2, np.random.default_rng(1))
    query = Tensor(np.ones((1, 10)))
    _, weights = rc_cross_attention(query, h_r, h_p, np.zeros(7, dtype=bool), attention)
    assert all((w > 0).all() for w in weights)
    assert rc_fallback_count() == 1


def test_vanilla_mode_ignores_centers():
    h_r, h_p = _memory()
    attention = RCCrossAttention(10, 2, np.random.default_rng(1))
    rc_mask = np.array([True] + [False] * 6)
    _, weights = rc_cross_attention(Tensor(np.ones((1, 10))), h_r, h_p, rc_mask, attention, True)
    assert all((w > 0).all() for w in weights)
    assert rc_fallback_count() == 0


def test_single_center_atom_returns_its_value_row():
    h_r, h_p = _memory()
    attention = RCCrossAttention(10, 2, np.random.default_rng(1))
    attention.attention.wo.weight.data[:] = np.eye(10)
    rc_mask = np.zeros(7, dtype=bool)
    rc_mask[5] = True
    query = Tensor(np.random.default_rng(3).normal(size=(3, 10)))
    out, weights = rc_cross_attention(query, h_r, h_p, rc_mask, attention)

    values = np.concatenate([h_r.data, h_p.data]) @ attention.attention.wv.weight.data
    assert_allclose(weights[1][:, 5], 1.0, atol=1e-12)
    assert_allclose(out.data[:, 5:], np.tile(values[5, 5:], (3, 1)), atol=1e-12)


def test_all_center_mask_equals_plain_attention():
    h_r, h_p = _memory()
    attention = RCCrossAttention(10, 4, np.random.default_rng(1))
    query = Tensor(np.random.default_rng(3).normal(size=(2, 10)))
    everywhere, _ = rc_cross_attention(query, h_r, h_p, np.ones(7, dtype=bool), attention)
    vanilla, _ = rc_cross_attention(query, h_r, h_p, np.ones(7, dtype=bool), attention, True)
    assert_allclose(everywhere.data, vanilla.data, atol=1e-12)
    assert rc_fallback_count() == 0


def test_center_mask_must_cover_memory():
    h_r, h_p = _memory()
    attention = RCCrossAttention(10, 2, np.random.default_rng(1))
    with pytest.raises(ShapeError):
        rc_cross_attention(Tensor(np.ones((1, 10))), h_r, h_p, np.ones(5, dtype=bool), attention)


def test_beam_search_matches_exhaustive_enumeration():
    expected = _exhaustive(3)[:5]
    found = beam_search(_toy_log_probs, BOS, EOS, beam_width=50, max_len=3, k=5)
    assert [tokens for tokens, _ in found] == [tokens for tokens, _ in expected]
    assert_allclose([s for _, s in found], [s for _, s in expected], atol=1e-12)


@pytest.mark.parametrize("max_len", [1, 3, 6])
def test_beam_width_one_is_greedy(max_len):
    found = beam_search(_toy_log_probs, BOS, EOS, beam_width=1, max_len=max_len)
    tokens, score = _greedy(max_len)
    assert len(found) == 1
    assert found[0][0] == tokens
    assert found[0][1] == pytest.approx(score, abs=1e-12)


def test_beam_search_scores_do_not_increase():
    found = beam_search(_toy_log_probs, BOS, EOS, beam_width=3, max_len=5)
    scores = [score for _, score in found]
    assert scores == sorted(scores, reverse=True)
    assert all(BOS not in tokens for tokens, _ in found)


def test_beam_search_fixed_length():
    found = beam_search(_toy_log_probs, BOS, EOS, beam_width=10, max_len=9, k=4, fixed_length=2)
    assert len(found) == 4
    for tokens, _ in found:
        assert len(tokens) == 3 and tokens[-1] == EOS and EOS not in tokens[:2]


def test_beam_width_must_cover_k():
    with pytest.raises(ValueError):
        beam_search(_toy_log_probs, BOS, EOS, beam_width=2, max_len=3, k=5)


def test_decoder_is_causal():
    decoder = SequenceDecoder(7, 8, 2, 2, np.random.default_rng(0))
    h_r, h_p = _memory(d=8)
    rc_mask = np.array([True, True, False, False, True, False, False])
    first = decoder([1, 4, 5], h_r, h_p, rc_mask)
    second = decoder([1, 4, 6], h_r, h_p, rc_mask)
    assert first.shape == (3, 7)
    assert_allclose(first.data[:2], second.data[:2], atol=1e-12)
    assert not np.allclose(first.data[2], second.data[2])


def test_decoder_rejects_unknown_tokens():
    decoder = SequenceDecoder(5, 8, 1, 2, np.random.default_rng(0))
    h_r, h_p = _memory(d=8)
    with pytest.raises(VocabularyError):
        decoder([1, 9], h_r, h_p, np.ones(7, dtype=bool))


def test_positional_encoding_first_row():
    table = positional_encoding(4, 8)
    assert table.shape == (4, 8)
    assert_allclose(table[0], [0, 1, 0, 1, 0, 1, 0, 1])


def test_pooled_head_with_constant_output():
    head = PooledRegressionHead(8, 2, np.random.default_rng(0))
    head.ffn.w2.weight.data[:] = 0.0
    head.ffn.w2.bias.data[:] = 0.7
    h_r, h_p = _memory(d=8)
    out = pooled_regression(h_r, h_p, np.array([True] * 3 + [False] * 4), head)
    assert out.shape == (1, 1)
    assert out.item() == pytest.approx(0.7)


def test_pooled_head_ignores_row_order():
    head = PooledRegressionHead(8, 2, np.random.default_rng(4))
    h_r, h_p = _memory(d=8)
    rc_mask = np.array([True, False, True, False, False, True, False])
    base = pooled_regression(h_r, h_p, rc_mask, head).item()
    perm_r, perm_p = [2, 0, 3, 1], [1, 2, 0]
    moved = pooled_regression(
        Tensor(h_r.data[perm_r]),
        Tensor(h_p.data[perm_p]),
        np.concatenate([rc_mask[:4][perm_r], rc_mask[4:][perm_p]]),
        head,
    ).item()
    assert moved == pytest.approx(base, abs=1e-12)


@pytest.mark.parametrize("vanilla", [False, True])
def test_pooled_head_query_gradient(vanilla):
    head = PooledRegressionHead(8, 2, np.random.default_rng(5), vanilla=vanilla)
    h_r, h_p = _memory(seed=6, d=8)
    rc_mask = np.array([False, True, True, False, True, False, False])

    def objective():
        return ndiff.sum(pooled_regression(h_r, h_p, rc_mask, head))

    assert check_gradients(objective, [head.query]) < 1e-6
