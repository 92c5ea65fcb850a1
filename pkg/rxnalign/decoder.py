"""
@module decoder
@description RC-aware cross-attention, sequence decoder, beam search and pooled regression
@version 0.1.0
@last_updated 2026-10-18
@status stable

Cross-attention keys are the stacked encoder rows [H_R; H_P]. The first
ceil(h/2) heads attend over every row; the remaining heads only see rows
flagged as reaction centers, so their softmax normalizes jointly over
reactant-side and product-side centers.
"""

import logging
import math
import threading
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from rxnalign import ndiff
from rxnalign.errors import ShapeError, VocabularyError
from rxnalign.layers import EmbeddingSet, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from rxnalign.ndiff import Tensor

log = logging.getLogger(__name__)

_fallback_lock = threading.Lock()
_fallback_count = 0


def rc_fallback_count() -> int:
    """Number of cross-attention calls that found no reaction center (process-wide)."""
    return _fallback_count


def reset_rc_fallback_count() -> None:
    global _fallback_count
    with _fallback_lock:
        _fallback_count = 0


def _note_fallback() -> None:
    global _fallback_count
    with _fallback_lock:
        _fallback_count += 1
        count = _fallback_count
    log.debug("empty reaction center, restricted heads use full attention (%d so far)", count)


class RCCrossAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.normal_heads = math.ceil(heads / 2)
        self.attention = self.add_child("attention", MultiHeadAttention(d, heads, rng))

    def head_masks(
        self, queries: int, rc_mask: np.ndarray, vanilla: bool = False
    ) -> Optional[List[Optional[np.ndarray]]]:
        if vanilla:
            return None
        if not rc_mask.any():
            _note_fallback()
            return None
        restricted = np.broadcast_to(rc_mask[None, :], (queries, rc_mask.shape[0]))
        return [None] * self.normal_heads + [restricted] * (self.heads - self.normal_heads)

    def __call__(
        self,
        query: Tensor,
        memory: Tensor,
        rc_mask: np.ndarray,
        vanilla: bool = False,
    ) -> Tuple[Tensor, List[np.ndarray]]:
        rc_mask = np.asarray(rc_mask, dtype=bool)
        if rc_mask.shape != (memory.shape[0],):
            raise ShapeError(f"rc mask {rc_mask.shape} for {memory.shape[0]} memory rows")
        return self.attention(query, memory, self.head_masks(query.shape[0], rc_mask, vanilla))


def rc_cross_attention(
    query: Tensor,
    h_r: Tensor,
    h_p: Tensor,
    rc_mask: np.ndarray,
    attention: RCCrossAttention,
    vanilla: bool = False,
) -> Tuple[Tensor, List[np.ndarray]]:
    """
    Attend from query rows into the stacked reactant and product features.

    Args:
        query: (q, d) query rows
        h_r: (n, d) reactant node features
        h_p: (m, d) product node features
        rc_mask: Boolean (n + m,) reaction-center flags, reactant rows first
        attention: Parameters
        vanilla: Use unrestricted attention in every head

    Returns:
        (q, d) output and one (q, n + m) weight matrix per head
    """
    return attention(query, ndiff.concat([h_r, h_p], 0), rc_mask, vanilla)


def positional_encoding(length: int, d: int) -> np.ndarray:
    positions = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, d, 2) / d))
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: d // 2])
    return table


class DecoderLayer(Module):
    """Post-norm transformer decoder layer with RC-aware cross-attention."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        self.self_attn = self.add_child("self_attn", MultiHeadAttention(d, heads, rng))
        self.norm1 = self.add_child("norm1", LayerNorm(d))
        self.cross_attn = self.add_child("cross_attn", RCCrossAttention(d, heads, rng))
        self.norm2 = self.add_child("norm2", LayerNorm(d))
        self.ffn = self.add_child("ffn", FeedForward(d, 2 * d, d, rng, dropout))
        self.norm3 = self.add_child("norm3", LayerNorm(d))
        self.heads = heads
        self.dropout = dropout

    def __call__(self, x, memory, rc_mask, vanilla, train, key, capture=None):
        length = x.shape[0]
        causal = np.tril(np.ones((length, length), dtype=bool))
        attended, _ = self.self_attn(x, x, [causal] * self.heads)
        x = self.norm1(ndiff.add(x, ndiff.dropout(attended, self.dropout, train, (*key, 0))))
        crossed, weights = self.cross_attn(x, memory, rc_mask, vanilla)
        if capture is not None:
            capture.append(weights)
        x = self.norm2(ndiff.add(x, ndiff.dropout(crossed, self.dropout, train, (*key, 1))))
        return self.norm3(ndiff.add(x, self.ffn(x, train, (*key, 2))))


class SequenceDecoder(Module):
    """Autoregressive decoder over a token vocabulary."""

    def __init__(
        self,
        vocab_size: int,
        d: int,
        layers: int,
        heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        vanilla: bool = False,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.d = d
        self.vanilla = vanilla
        self.embed = self.add_child("embed", EmbeddingSet([vocab_size], d, rng))
        self.layers = [
            self.add_child(f"layers.{i}", DecoderLayer(d, heads, rng, dropout))
            for i in range(layers)
        ]
        self.output = self.add_child("output", Linear(d, vocab_size, rng))

    def __call__(
        self,
        tokens: Sequence[int],
        h_r: Tensor,
        h_p: Tensor,
        rc_mask: np.ndarray,
        train: bool = False,
        key: Sequence[int] = (0,),
        capture: Optional[List[List[np.ndarray]]] = None,
    ) -> Tensor:
        """
        Teacher-forced logits, one row per input position.

        Raises:
            VocabularyError: If a token id is outside the vocabulary
        """
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ShapeError("decoder input must be a non-empty token sequence")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise VocabularyError(f"token id outside vocabulary of {self.vocab_size}")
        x = ndiff.add(
            self.embed(ids[:, None]), Tensor(positional_encoding(ids.size, self.d))
        )
        memory = ndiff.concat([h_r, h_p], 0)
        for i, layer in enumerate(self.layers):
            x = layer(x, memory, rc_mask, self.vanilla, train, (*key, i), capture)
        return self.output(x)


def decode_sequence_train(
    decoder: SequenceDecoder,
    h_r: Tensor,
    h_p: Tensor,
    rc_mask: np.ndarray,
    tokens: Sequence[int],
    train: bool = True,
    key: Sequence[int] = (0,),
) -> Tensor:
    """Logits for every position of a BOS-prefixed target (teacher forcing)."""
    return decoder(tokens, h_r, h_p, rc_mask, train, key)


def log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def beam_search(
    log_prob_fn: Callable[[List[int]], np.ndarray],
    bos: int,
    eos: int,
    beam_width: int,
    max_len: int,
    k: Optional[int] = None,
    fixed_length: Optional[int] = None,
) -> List[Tuple[List[int], float]]:
    """
    Breadth-limited search for the best output sequences.

    Alive hypotheses are pruned to ``beam_width`` by cumulative log-prob;
    finished hypotheses (EOS emitted or ``max_len`` tokens generated) are
    ranked by log-prob divided by generated token count, ties broken by the
    token sequence. Non-finite log-probs mark forbidden tokens.

    Args:
        log_prob_fn: Maps a prefix (starting with BOS) to next-token log-probs
        bos: Start token id
        eos: End token id
        beam_width: Hypotheses kept per step
        max_len: Maximum generated tokens, EOS included
        k: Number of results (defaults to beam_width)
        fixed_length: If set, EOS is forced after exactly this many tokens

    Returns:
        Up to k (tokens without BOS, score) pairs with non-increasing scores
    """
    k = beam_width if k is None else k
    if beam_width < k or k < 1:
        raise ValueError(f"beam width {beam_width} must be >= k = {k} >= 1")
    if fixed_length is not None:
        max_len = fixed_length + 1
    alive: List[Tuple[List[int], float]] = [([bos], 0.0)]
    finished: List[Tuple[List[int], float]] = []
    for step in range(max_len):
        candidates = []
        for prefix, score in alive:
            log_probs = np.asarray(log_prob_fn(prefix), dtype=np.float64)
            for token in range(log_probs.shape[0]):
                value = log_probs[token]
                if not np.isfinite(value):
                    continue
                if fixed_length is not None and (token == eos) != (step == fixed_length):
                    continue
                candidates.append((prefix + [token], score + float(value)))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        alive = []
        for tokens, score in candidates[:beam_width]:
            if tokens[-1] == eos or step == max_len - 1:
                finished.append((tokens, score))
            else:
                alive.append((tokens, score))
        if not alive:
            break
    ranked = sorted(
        ((tokens[1:], score / (len(tokens) - 1)) for tokens, score in finished),
        key=lambda c: (-c[1], c[0]),
    )
    return ranked[:k]


class PooledRegressionHead(Module):
    """Learned query attending into the encoder output, then FFN to one value."""

    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        vanilla: bool = False,
    ):
        super().__init__()
        self.vanilla = vanilla
        self.query = self.add_param("query", rng.normal(0.0, 1.0 / math.sqrt(d), size=(1, d)))
        self.cross_attn = self.add_child("cross_attn", RCCrossAttention(d, heads, rng))
        self.ffn = self.add_child("ffn", FeedForward(d, d, 1, rng, dropout))

    def __call__(
        self,
        h_r: Tensor,
        h_p: Tensor,
        rc_mask: np.ndarray,
        train: bool = False,
        key: Sequence[int] = (0,),
        capture: Optional[List[List[np.ndarray]]] = None,
    ) -> Tensor:
        pooled, weights = rc_cross_attention(
            self.query, h_r, h_p, rc_mask, self.cross_attn, self.vanilla
        )
        if capture is not None:
            capture.append(weights)
        return self.ffn(pooled, train, key)


def pooled_regression(
    h_r: Tensor, h_p: Tensor, rc_mask: np.ndarray, head: PooledRegressionHead
) -> Tensor:
    """Reaction-level scalar prediction, shape (1, 1)."""
    return head(h_r, h_p, rc_mask)
