"""
@module gradcheck
@description Central finite-difference checks for every ndiff operator
@version 0.1.0
@last_updated 2026-10-18
@status stable

Each suite case builds random inputs for one operator and a function of
those inputs. The output is reduced to a scalar through a fixed random
projection so that gradients are non-trivial (``sum(softmax(x))`` alone
would have an all-zero gradient).
"""

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from rxnalign import ndiff
from rxnalign.decoder import PooledRegressionHead
from rxnalign.encoder import AtomAlignedEncoder, ConditionEncoder, featurize_reaction
from rxnalign.layers import Module
from rxnalign.molgraph import parse_reaction
from rxnalign.ndiff import Tensor
from rxnalign.rxncore import align_atoms, order_reagents, split_reactants_by_mapping

CaseBuilder = Callable[[np.random.Generator], Tuple[List[Tensor], Callable[..., Tensor]]]

DEFAULT_EPS = 1e-5
GRADIENT_FLOOR = 1e-3
# Smaller step for the composed model: fewer ReLU kinks inside the stencil.
COMPOSITION_EPS = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(|a| + |n|, floor)."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), GRADIENT_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    eps: float = DEFAULT_EPS,
    entries: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Central differences of a scalar-valued ``fn`` with respect to ``tensor``.

    ``entries`` restricts the stencil to those flat indices; the rest stay zero.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    with ndiff.no_grad():
        for i in range(flat.size) if entries is None else entries:
            original = flat[i]
            flat[i] = original + eps
            plus = fn().item()
            flat[i] = original - eps
            minus = fn().item()
            flat[i] = original
            grad.reshape(-1)[i] = (plus - minus) / (2.0 * eps)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = DEFAULT_EPS,
    entries: Optional[Sequence[np.ndarray]] = None,
) -> float:
    """
    Compare backward() against finite differences for every input.

    Args:
        fn: Zero-argument function returning a scalar Tensor built from inputs
        inputs: Tensors with requires_grad=True
        eps: Finite-difference step
        entries: Per-input flat indices to compare (default: every entry)

    Returns:
        Max relative error over the compared entries
    """
    for tensor in inputs:
        tensor.zero_grad()
    ndiff.backward(fn())
    worst = 0.0
    for position, tensor in enumerate(inputs):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if entries is None:
            numeric = numerical_gradient(fn, tensor, eps)
            worst = max(worst, relative_error(analytic, numeric))
            continue
        picked = entries[position]
        numeric = numerical_gradient(fn, tensor, eps, picked)
        worst = max(
            worst,
            relative_error(analytic.reshape(-1)[picked], numeric.reshape(-1)[picked]),
        )
    return worst


def _param(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> Tensor:
    magnitude = rng.uniform(0.1, 1.5, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(magnitude * sign, requires_grad=True)


def _dims(rng: np.random.Generator, count: int) -> List[int]:
    return [int(d) for d in rng.integers(1, 6, size=count)]


def _case_matmul(rng):
    n, k, m = _dims(rng, 3)
    return [_param(rng, n, k), _param(rng, k, m)], ndiff.matmul


def _case_add(rng):
    n, d = _dims(rng, 2)
    return [_param(rng, n, d), _param(rng, n, d)], ndiff.add


def _case_add_bias(rng):
    n, d = _dims(rng, 2)
    return [_param(rng, n, d), _param(rng, d)], ndiff.add


def _case_mul(rng):
    n, d = _dims(rng, 2)
    return [_param(rng, n, d), _param(rng, n, d)], ndiff.mul


def _case_row_scale(rng):
    n, d = _dims(rng, 2)
    return [_param(rng, n, d), _param(rng, n, 1)], ndiff.row_scale


def _case_concat(rng):
    n, a, b = _dims(rng, 3)
    return [_param(rng, n, a), _param(rng, n, b)], lambda x, y: ndiff.concat([x, y], 1)


def _case_slice(rng):
    n = int(rng.integers(2, 7))
    d = int(rng.integers(1, 5))
    start = int(rng.integers(0, n - 1))
    stop = int(rng.integers(start + 1, n + 1))
    return [_param(rng, n, d)], lambda x: ndiff.slice_axis(x, start, stop, 0)


def _case_index_select(rng):
    n, d = _dims(rng, 2)
    ids = rng.integers(0, n, size=n + 2)
    return [_param(rng, n, d)], lambda x: ndiff.index_select(x, ids)


def _case_transpose(rng):
    n, d = _dims(rng, 2)
    return [_param(rng, n, d)], ndiff.transpose


def _case_embedding(rng):
    d = int(rng.integers(1, 5))
    tables = [_param(rng, int(rng.integers(2, 5)), d) for _ in range(3)]
    rows = int(rng.integers(1, 6))
    ids = np.stack([rng.integers(0, t.shape[0], size=rows) for t in tables], axis=1)
    return tables, lambda *ts: ndiff.embedding_lookup_sum(ts, ids)


def _case_relu(rng):
    n, d = _dims(rng, 2)
    return [_away_from_zero(rng, n, d)], ndiff.relu


def _case_leaky_relu(rng):
    n, d = _dims(rng, 2)
    return [_away_from_zero(rng, n, d)], lambda x: ndiff.leaky_relu(x, 0.2)


def _case_softmax(rng):
    n, d = _dims(rng, 2)
    return [_param(rng, n, d)], lambda x: ndiff.softmax(x, -1)


def _case_masked_softmax(rng):
    n, d = _dims(rng, 2)
    mask = rng.random((n, d)) > 0.4
    mask[np.arange(n), rng.integers(0, d, size=n)] = True
    return [_param(rng, n, d)], lambda x: ndiff.masked_softmax(x, mask, -1)


def _case_segment_softmax(rng):
    k = int(rng.integers(2, 9))
    segments = int(rng.integers(1, 4))
    ids = rng.integers(0, segments, size=k)
    return [_param(rng, k, 1)], lambda x: ndiff.segment_softmax(x, ids, segments)


def _case_segment_sum(rng):
    k, d = _dims(rng, 2)
    segments = int(rng.integers(1, 4))
    ids = rng.integers(0, segments, size=k)
    return [_param(rng, k, d)], lambda x: ndiff.segment_sum(x, ids, segments)


def _case_layer_norm(rng):
    n = int(rng.integers(1, 5))
    d = int(rng.integers(2, 6))
    return [_param(rng, n, d), _param(rng, d), _param(rng, d)], ndiff.layer_norm


def _case_dropout(rng):
    n, d = _dims(rng, 2)
    key = [int(k) for k in rng.integers(0, 2**31, size=3)]
    return [_param(rng, n, d)], lambda x: ndiff.dropout(x, 0.3, True, key)


def _case_cross_entropy(rng):
    t = int(rng.integers(1, 5))
    v = int(rng.integers(2, 6))
    targets = rng.integers(0, v, size=t)
    return [_param(rng, t, v)], lambda x: ndiff.cross_entropy(x, targets)


def _case_mse(rng):
    n, d = _dims(rng, 2)
    target = rng.normal(size=(n, d))
    return [_param(rng, n, d)], lambda x: ndiff.mse(x, target)


def _case_mean_rows(rng):
    n, d = _dims(rng, 2)
    return [_param(rng, n, d)], ndiff.mean_rows


def _case_scale(rng):
    n, d = _dims(rng, 2)
    factor = float(rng.normal())
    return [_param(rng, n, d)], lambda x: ndiff.scale(x, factor)


SUITE: Dict[str, CaseBuilder] = {
    "matmul": _case_matmul,
    "add": _case_add,
    "add_bias": _case_add_bias,
    "mul": _case_mul,
    "scale": _case_scale,
    "row_scale": _case_row_scale,
    "concat": _case_concat,
    "slice": _case_slice,
    "index_select": _case_index_select,
    "transpose": _case_transpose,
    "embedding_lookup_sum": _case_embedding,
    "relu": _case_relu,
    "leaky_relu": _case_leaky_relu,
    "softmax": _case_softmax,
    "masked_softmax": _case_masked_softmax,
    "segment_softmax": _case_segment_softmax,
    "segment_sum": _case_segment_sum,
    "layer_norm": _case_layer_norm,
    "dropout": _case_dropout,
    "cross_entropy": _case_cross_entropy,
    "mse": _case_mse,
    "mean_rows": _case_mean_rows,
}


def check_case(name: str, seed: int) -> float:
    """Run one suite case at one seed and return its max relative error."""
    rng = np.random.default_rng(seed)
    inputs, op = SUITE[name](rng)
    first = op(*inputs)
    projection = Tensor(rng.normal(size=first.shape))

    def objective() -> Tensor:
        out = op(*inputs)
        if out.size == 1:
            return out
        return ndiff.sum(ndiff.mul(out, projection))

    return check_gradients(objective, inputs)


def run_suite(
    seeds: Iterable[int] = range(10), names: Optional[Sequence[str]] = None
) -> Dict[str, float]:
    """
    Run the finite-difference suite.

    Returns:
        Mapping of operator name to the max relative error across seeds
    """
    seeds = list(seeds)
    results = {}
    for name in names or SUITE:
        results[name] = max(check_case(name, seed) for seed in seeds)
    return results


COMPOSITION_REACTION = "[CH3:1][C:2](=[O:3])[OH:4].[NH3:5]>CCO.CC#N>[CH3:1][C:2](=[O:3])[NH2:5]"
COMPOSITION_SAMPLES = 3


def sample_entries(
    params: Dict[str, Tensor], per_tensor: int, rng: np.random.Generator
) -> Dict[str, np.ndarray]:
    """Up to ``per_tensor`` distinct flat indices drawn from every parameter tensor."""
    return {
        name: rng.choice(tensor.data.size, size=min(per_tensor, tensor.data.size), replace=False)
        for name, tensor in params.items()
    }


def composition_model(
    seed: int = 0, hidden: int = 8, heads: int = 2
) -> Tuple[Module, Callable[[], Tensor]]:
    """A 2-block encoder with adapter, a 1-layer condition encoder and a pooled head."""
    reactants, reagents, products = parse_reaction(COMPOSITION_REACTION)
    reactants, reagents = split_reactants_by_mapping(reactants, reagents, products)
    features = featurize_reaction(
        align_atoms(reactants, products, condition_mols=order_reagents(reagents))
    )
    rng = np.random.default_rng(seed)
    model = Module()
    encoder = model.add_child("encoder", AtomAlignedEncoder(hidden, 2, heads, rng, adapter=True))
    condition = model.add_child("condition", ConditionEncoder(hidden, 1, rng))
    head = model.add_child("head", PooledRegressionHead(hidden, heads, rng))

    def objective() -> Tensor:
        state = encoder(features, condition(features.conditions))
        return ndiff.sum(head(state.h_r, state.h_p, features.rc_mask))

    return model, objective


def check_composition(
    seed: int = 0, hidden: int = 8, heads: int = 2, per_tensor: int = COMPOSITION_SAMPLES
) -> float:
    """
    Finite-difference check through the composed model of ``composition_model``.

    ``per_tensor`` random entries of every parameter tensor are perturbed.
    """
    model, objective = composition_model(seed, hidden, heads)
    params = model.parameters()
    entries = sample_entries(params, per_tensor, np.random.default_rng(seed))
    return check_gradients(
        objective, list(params.values()), COMPOSITION_EPS, [entries[name] for name in params]
    )
