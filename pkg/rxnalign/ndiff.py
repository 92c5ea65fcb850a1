"""
@module ndiff
@description Dense float64 tensors with reverse-mode automatic differentiation
@version 0.1.0
@last_updated 2026-10-18
@status stable

A deliberately small operator set: exactly what the encoder, decoders and
losses need. Every op records a ``TapeNode`` holding its parents and a
backward function that maps the output gradient to one gradient per parent.

Broadcasting is limited to adding a 1-D bias along the trailing axis.
"""

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from rxnalign.errors import MaskError, ShapeError, TapeError

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

LAYER_NORM_EPS = 1e-5

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Return True when new ops are recorded on the tape (per thread)."""
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block for the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass
class TapeNode:
    """One recorded operation: its parents and how to push gradients to them."""

    op: str
    parents: Tuple["Tensor", ...]
    backward: Optional[BackwardFn]
    consumed: bool = False


class Tensor:
    """An n-dimensional float64 value that may take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.node = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _record(
    data: np.ndarray, op: str, parents: Sequence[Tensor], fn: BackwardFn
) -> Tensor:
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op=op, parents=tuple(parents), backward=fn)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def backward(output: Tensor) -> None:
    """
    Propagate gradients from a scalar output to every requires_grad leaf.

    Leaf gradients accumulate into ``Tensor.grad``. Each tape node is visited
    exactly once, in reverse topological order, and released afterwards.

    Raises:
        ShapeError: If the output is not a scalar
        TapeError: If the tape behind the output was already consumed
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if output.node is None:
        if not output.requires_grad:
            raise TapeError("output does not depend on any requires_grad tensor")
        output.grad = np.ones_like(output.data)
        return
    if output.node.consumed:
        raise TapeError("backward called twice on a consumed tape")

    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(output, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            if tensor.node.consumed:
                raise TapeError("tape shares nodes with an already consumed tape")
            for parent in tensor.node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for tensor in reversed(order):
        grad = grads.pop(id(tensor), None)
        node = tensor.node
        if node is None:
            if grad is not None:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        if grad is not None:
            for parent, parent_grad in zip(node.parents, node.backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad
        node.consumed = True
        node.backward = None
        node.parents = ()


# ---------------------------------------------------------------------------
# Linear algebra and elementwise arithmetic
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data

    def _backward(g: np.ndarray):
        return g @ bv.T, av.T @ g

    return _record(av @ bv, "matmul", (a, b), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1-D bias over the trailing axis."""
    if a.shape == b.shape:
        return _record(a.data + b.data, "add", (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        width = b.shape[0]

        def _backward(g: np.ndarray):
            return g, g.reshape(-1, width).sum(axis=0)

        return _record(a.data + b.data, "add_bias", (a, b), _backward)
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not compatible")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _record(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors of identical shape."""
    _require_same_shape("mul", a, b)
    av, bv = a.data, b.data
    return _record(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, factor: float) -> Tensor:
    return _record(x.data * factor, "scale", (x,), lambda g: (g * factor,))


def row_scale(x: Tensor, weights: Tensor) -> Tensor:
    """Multiply row ``i`` of a (k, d) tensor by ``weights[i]`` of shape (k, 1)."""
    if x.ndim != 2 or weights.shape != (x.shape[0], 1):
        raise ShapeError(f"row_scale: {x.shape} with weights {weights.shape}")
    xv, wv = x.data, weights.data

    def _backward(g: np.ndarray):
        return g * wv, (g * xv).sum(axis=1, keepdims=True)

    return _record(xv * wv, "row_scale", (x, weights), _backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D tensor, got {x.shape}")
    return _record(x.data.T.copy(), "transpose", (x,), lambda g: (g.T,))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return _record(
        np.array(x.data.sum()), "sum", (x,), lambda g: (np.full(shape, float(g)),)
    )


def mean_rows(x: Tensor) -> Tensor:
    """Average the rows of a (n, d) tensor into a (1, d) tensor."""
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_rows: expected non-empty 2-D tensor, got {x.shape}")
    count = x.shape[0]

    def _backward(g: np.ndarray):
        return (np.repeat(g, count, axis=0) / count,)

    return _record(x.data.mean(axis=0, keepdims=True), "mean_rows", (x,), _backward)


# ---------------------------------------------------------------------------
# Shape manipulation and gathering
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``."""
    if not tensors:
        raise ShapeError("concat: no tensors given")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g: np.ndarray):
        return tuple(np.split(g, boundaries, axis=axis))

    return _record(data, "concat", tuple(tensors), _backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Take ``x[start:stop]`` along ``axis``."""
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis size {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = x.shape

    def _backward(g: np.ndarray):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _record(x.data[index].copy(), "slice", (x,), _backward)


def index_select(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of ``x``; repeated indices accumulate in the backward pass."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise ShapeError(f"index_select: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def _backward(g: np.ndarray):
        full = np.zeros(shape)
        np.add.at(full, indices, g)
        return (full,)

    return _record(x.data[indices], "index_select", (x,), _backward)


def embedding_lookup_sum(tables: Sequence[Tensor], indices: np.ndarray) -> Tensor:
    """
    Sum one embedding row per descriptor column.

    Args:
        tables: One (vocab_j, d) table per descriptor
        indices: Integer array of shape (N, len(tables))

    Returns:
        (N, d) tensor whose row i is sum_j tables[j][indices[i, j]]
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2 or indices.shape[1] != len(tables):
        raise ShapeError(
            f"embedding_lookup_sum: indices {indices.shape} for {len(tables)} tables"
        )
    width = tables[0].shape[1]
    out = np.zeros((indices.shape[0], width))
    for column, table in enumerate(tables):
        if table.ndim != 2 or table.shape[1] != width:
            raise ShapeError(f"embedding table {column} has shape {table.shape}")
        ids = indices[:, column]
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError(
                f"descriptor {column}: index out of range for table of {table.shape[0]}"
            )
        out += table.data[ids]

    def _backward(g: np.ndarray):
        grads = []
        for column, table in enumerate(tables):
            full = np.zeros(table.shape)
            np.add.at(full, indices[:, column], g)
            grads.append(full)
        return tuple(grads)

    return _record(out, "embedding_lookup_sum", tuple(tables), _backward)


def segment_sum(values: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``values`` that share a segment id."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape != (values.shape[0],):
        raise ShapeError(
            f"segment_sum: {segment_ids.shape} ids for {values.shape[0]} rows"
        )
    out = np.zeros((num_segments,) + values.shape[1:])
    np.add.at(out, segment_ids, values.data)
    return _record(out, "segment_sum", (values,), lambda g: (g[segment_ids],))


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _record(x.data * active, "relu", (x,), lambda g: (g * active,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)
    return _record(x.data * factor, "leaky_relu", (x,), lambda g: (g * factor,))


def _softmax_backward(y: np.ndarray, axis: int) -> BackwardFn:
    def _backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _backward


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _record(y, "softmax", (x,), _softmax_backward(y, axis))


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """
    Softmax over the positions where ``mask`` is True.

    Masked positions receive exactly 0 and the rest renormalize.

    Raises:
        MaskError: If any row along ``axis`` is fully masked
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"masked_softmax: mask {mask.shape} for values {x.shape}")
    if not mask.any(axis=axis).all():
        raise MaskError("masked_softmax: a row has every position masked")
    z = np.where(mask, x.data, -np.inf)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _record(y, "masked_softmax", (x,), _softmax_backward(y, axis))


def segment_softmax(scores: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of a (k, 1) score column within each segment."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if scores.shape != (segment_ids.shape[0], 1):
        raise ShapeError(
            f"segment_softmax: scores {scores.shape} for {segment_ids.shape[0]} ids"
        )
    flat = scores.data[:, 0]
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, segment_ids, flat)
    e = np.exp(flat - peak[segment_ids])
    totals = np.zeros(num_segments)
    np.add.at(totals, segment_ids, e)
    y = (e / totals[segment_ids])[:, None]

    def _backward(g: np.ndarray):
        weighted = g * y
        per_segment = np.zeros(num_segments)
        np.add.at(per_segment, segment_ids, weighted[:, 0])
        return (weighted - y * per_segment[segment_ids][:, None],)

    return _record(y, "segment_softmax", (scores,), _backward)


def layer_norm(
    x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS
) -> Tensor:
    """Normalize over the trailing axis, then apply gain and bias."""
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm: gain {gain.shape}, bias {bias.shape} for {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gv = gain.data

    def _backward(g: np.ndarray):
        gxhat = g * gv
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).reshape(-1, width).sum(axis=0)
        gbias = g.reshape(-1, width).sum(axis=0)
        return gx, ggain, gbias

    return _record(xhat * gv + bias.data, "layer_norm", (x, gain, bias), _backward)


def dropout(x: Tensor, p: float, train: bool, key: Sequence[int]) -> Tensor:
    """
    Inverted dropout with a counter-based generator.

    The mask depends only on ``key`` (global seed, layer id, step, ...), so
    runs are reproducible regardless of call order or thread scheduling.
    """
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    generator = np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))
    )
    keep = (generator.random(x.shape) >= p) / (1.0 - p)
    return _record(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def cross_entropy(
    logits: Tensor, targets: Sequence[int], ignore_index: Optional[int] = None
) -> Tensor:
    """Mean token cross-entropy of (T, V) logits against T integer targets."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    keep = np.ones(targets.shape, dtype=bool)
    if ignore_index is not None:
        keep = targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise ShapeError("cross_entropy: every target is ignored")
    if targets[keep].min() < 0 or targets[keep].max() >= logits.shape[1]:
        raise ShapeError("cross_entropy: target id outside the logits width")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.nonzero(keep)[0]
    loss = -log_probs[rows, targets[rows]].sum() / count

    def _backward(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, targets[rows]] -= 1.0
        grad[~keep] = 0.0
        return (grad * (float(g) / count),)

    return _record(np.array(loss), "cross_entropy", (logits,), _backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error; ``target`` may be an array or a Tensor."""
    target_tensor = target if isinstance(target, Tensor) else Tensor._wrap(
        np.asarray(target, dtype=np.float64)
    )
    _require_same_shape("mse", pred, target_tensor)
    diff = pred.data - target_tensor.data
    count = diff.size

    def _backward(g: np.ndarray):
        grad = diff * (2.0 * float(g) / count)
        return grad, -grad

    return _record(
        np.array((diff**2).mean()), "mse", (pred, target_tensor), _backward
    )


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Dict[str, Tensor],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """
    Apply one Adam update with bias correction.

    Parameters are updated in place; parameters without a gradient are left
    untouched and keep their moments.

    Returns:
        The new optimizer state
    """
    step = state.step + 1
    new_m = dict(state.m)
    new_v = dict(state.v)
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"adam: gradient {grad.shape} for parameter {name} {param.shape}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * grad
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return AdamState(step=step, m=new_m, v=new_v)


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale gradients in place to a global L2 norm of at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()] or [0.0])))
    if np.isfinite(total) and total > max_norm > 0:
        factor = max_norm / (total + 1e-12)
        for name in grads:
            grads[name] = grads[name] * factor
    return total
