"""
@module layers
@description Parameter containers and the dense building blocks shared by encoder and decoders
@version 0.1.0
@last_updated 2026-10-18
@status stable
"""

import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from rxnalign import ndiff
from rxnalign.errors import ShapeError
from rxnalign.ndiff import Tensor


class Module:
    """
    Named tree of parameters.

    Parameters and child modules are registered explicitly; names are
    dot-joined paths such as ``blocks.0.ffn1.w1.weight``.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._params.items():
            yield prefix + name, tensor
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        yield from self._children.items()

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def zero_grad(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Copy arrays into the registered parameters.

        Raises:
            ShapeError: On missing/unexpected names or mismatched shapes
        """
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError(f"{name}: expected {tensor.shape}, got {value.shape}")
            tensor.data = value.copy()


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.weight = self.add_param("weight", xavier(rng, d_in, d_out))
        self.bias = self.add_param("bias", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ndiff.matmul(x, self.weight)
        return ndiff.add(out, self.bias) if self.bias is not None else out


class FeedForward(Module):
    """Linear, ReLU, dropout, Linear."""

    def __init__(
        self,
        d_in: int,
        d_hidden: int,
        d_out: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.w1 = self.add_child("w1", Linear(d_in, d_hidden, rng))
        self.w2 = self.add_child("w2", Linear(d_hidden, d_out, rng))
        self.dropout = dropout

    def __call__(self, x: Tensor, train: bool = False, key: Sequence[int] = (0,)) -> Tensor:
        hidden = ndiff.dropout(ndiff.relu(self.w1(x)), self.dropout, train, key)
        return self.w2(hidden)


class LayerNorm(Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = self.add_param("gain", np.ones(d))
        self.bias = self.add_param("bias", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ndiff.layer_norm(x, self.gain, self.bias)


class EmbeddingSet(Module):
    """One table per categorical descriptor; a row's feature is the sum of lookups."""

    def __init__(self, sizes: Sequence[int], d: int, rng: np.random.Generator):
        super().__init__()
        self.sizes = tuple(sizes)
        self.tables = [
            self.add_param(f"table{i}", rng.normal(0.0, 1.0 / math.sqrt(d), size=(size, d)))
            for i, size in enumerate(sizes)
        ]

    def __call__(self, indices: np.ndarray) -> Tensor:
        return ndiff.embedding_lookup_sum(self.tables, indices)


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention over ``heads`` slices of width d / heads.

    ``head_masks[h]`` is either None (attend everywhere) or a boolean
    (queries x keys) array of allowed positions for head ``h``.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, bias: bool = False):
        super().__init__()
        if heads <= 0 or d % heads:
            raise ShapeError(f"{heads} heads do not divide hidden size {d}")
        self.d = d
        self.heads = heads
        self.d_head = d // heads
        self.wq = self.add_child("wq", Linear(d, d, rng, bias))
        self.wk = self.add_child("wk", Linear(d, d, rng, bias))
        self.wv = self.add_child("wv", Linear(d, d, rng, bias))
        self.wo = self.add_child("wo", Linear(d, d, rng, bias))

    def __call__(
        self,
        query: Tensor,
        memory: Tensor,
        head_masks: Optional[Sequence[Optional[np.ndarray]]] = None,
    ) -> Tuple[Tensor, List[np.ndarray]]:
        """
        Args:
            query: (q, d) query rows
            memory: (k, d) key/value rows
            head_masks: Optional per-head boolean masks of shape (q, k)

        Returns:
            Output rows (q, d) and the per-head attention weights (q, k)
        """
        if query.shape[-1] != self.d or memory.shape[-1] != self.d:
            raise ShapeError(f"attention width {self.d}: got {query.shape} and {memory.shape}")
        q = self.wq(query)
        k = self.wk(memory)
        v = self.wv(memory)
        factor = 1.0 / math.sqrt(self.d_head)
        outputs, weights = [], []
        for h in range(self.heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            scores = ndiff.scale(
                ndiff.matmul(
                    ndiff.slice_axis(q, lo, hi, 1),
                    ndiff.transpose(ndiff.slice_axis(k, lo, hi, 1)),
                ),
                factor,
            )
            mask = head_masks[h] if head_masks is not None else None
            if mask is None:
                alpha = ndiff.softmax(scores, -1)
            else:
                alpha = ndiff.masked_softmax(scores, np.broadcast_to(mask, scores.shape), -1)
            weights.append(alpha.data.copy())
            outputs.append(ndiff.matmul(alpha, ndiff.slice_axis(v, lo, hi, 1)))
        return self.wo(ndiff.concat(outputs, 1)), weights
