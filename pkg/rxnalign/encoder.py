"""
@module encoder
@description Atom-aligned reaction encoder, condition adapter and molecular condition encoder
@version 0.1.0
@last_updated 2026-10-18
@status stable

One encoder block:

    1. message passing on each side (graph-attention variant with edge features)
    2. residual + layer norm
    3. fusion: mapped pairs share one feed-forward over [reactant || product],
       leaving atoms get their own feed-forward
    4. residual + layer norm
    5. optional condition adapter: h = h + Attn(h, C, C)
    6. edge update from endpoint features, with an edge residual

Graphs are featurized once into integer descriptor arrays (``featurize_reaction``)
so that the numeric code never touches MolGraph objects.
"""

import enum
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from rxnalign import ndiff
from rxnalign.errors import ShapeError
from rxnalign.layers import EmbeddingSet, FeedForward, LayerNorm, Module, MultiHeadAttention
from rxnalign.molgraph import BondOrder, MolGraph
from rxnalign.ndiff import Tensor
from rxnalign.rxncore import AlignedReaction

log = logging.getLogger(__name__)

MAX_CHARGE = 5
MAX_DEGREE = 6
MAX_HYDROGENS = 5

# element, charge offset, degree, total H, aromatic, in ring, isotope flag,
# charge sign, radical placeholder
ATOM_DESCRIPTOR_SIZES: Tuple[int, ...] = (
    119,
    2 * MAX_CHARGE + 1,
    MAX_DEGREE + 1,
    MAX_HYDROGENS + 1,
    2,
    2,
    2,
    3,
    1,
)
# order, stereo, conjugated
BOND_DESCRIPTOR_SIZES: Tuple[int, ...] = (4, 3, 2)


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphFeatures:
    """
    Integer descriptors of one molecular graph.

    Every bond appears as two directed edges (u -> v and v -> u).
    """

    atoms: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    bonds: np.ndarray

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def num_edges(self) -> int:
        return self.senders.shape[0]


def atom_descriptors(mol: MolGraph) -> np.ndarray:
    ring_atoms = {i for bond in mol.bonds if bond.in_ring for i in bond.key}
    rows = []
    for i, atom in enumerate(mol.atoms):
        charge = int(np.clip(atom.formal_charge, -MAX_CHARGE, MAX_CHARGE))
        rows.append(
            (
                atom.element,
                charge + MAX_CHARGE,
                min(mol.degree(i), MAX_DEGREE),
                min(mol.total_h[i], MAX_HYDROGENS),
                int(atom.aromatic),
                int(i in ring_atoms),
                int(atom.isotope is not None),
                int(np.sign(atom.formal_charge)) + 1,
                0,
            )
        )
    return np.array(rows, dtype=np.int64).reshape(-1, len(ATOM_DESCRIPTOR_SIZES))


def featurize_molecule(mol: MolGraph) -> GraphFeatures:
    senders, receivers, bonds = [], [], []
    for bond in mol.bonds:
        row = (int(bond.order) - int(BondOrder.SINGLE), int(bond.stereo), int(bond.conjugated))
        senders += [bond.begin, bond.end]
        receivers += [bond.end, bond.begin]
        bonds += [row, row]
    return GraphFeatures(
        atoms=atom_descriptors(mol),
        senders=np.array(senders, dtype=np.int64),
        receivers=np.array(receivers, dtype=np.int64),
        bonds=np.array(bonds, dtype=np.int64).reshape(-1, len(BOND_DESCRIPTOR_SIZES)),
    )


@dataclass(frozen=True)
class ReactionFeatures:
    reactant: GraphFeatures
    product: GraphFeatures
    pair_count: int
    rc_mask: np.ndarray
    conditions: Tuple[GraphFeatures, ...] = ()

    @property
    def n(self) -> int:
        return self.reactant.num_atoms

    @property
    def m(self) -> int:
        return self.product.num_atoms


def featurize_reaction(rxn: AlignedReaction) -> ReactionFeatures:
    return ReactionFeatures(
        reactant=featurize_molecule(rxn.reactant),
        product=featurize_molecule(rxn.product),
        pair_count=rxn.pair_count,
        rc_mask=rxn.rc_set.mask(rxn.n, rxn.m),
        conditions=tuple(featurize_molecule(mol) for mol in rxn.condition_mols),
    )


def featurize_all(rxns: Sequence[AlignedReaction], workers: int = 1) -> List[ReactionFeatures]:
    """Featurize a dataset, optionally across worker processes (order preserved)."""
    if workers <= 1 or len(rxns) < 2 * workers:
        return [featurize_reaction(rxn) for rxn in rxns]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(featurize_reaction, rxns, chunksize=64))


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class ConditionProvenance(enum.Enum):
    MOLECULAR = "molecular"
    TEXTUAL = "textual"
    ABSENT = "absent"


@dataclass
class ConditionMatrix:
    matrix: Optional[Tensor]
    provenance: ConditionProvenance = ConditionProvenance.ABSENT

    @property
    def present(self) -> bool:
        return self.matrix is not None


@dataclass
class EncoderState:
    h_r: Tensor
    h_p: Tensor
    e_r: Tensor
    e_p: Tensor


@dataclass
class EncoderTrace:
    """Per-layer node features (layer 0 is the embedding output)."""

    reactant: List[np.ndarray] = field(default_factory=list)
    product: List[np.ndarray] = field(default_factory=list)

    def record(self, state: EncoderState) -> None:
        self.reactant.append(state.h_r.data.copy())
        self.product.append(state.h_p.data.copy())


def _key(key: Sequence[int], *parts: int) -> Tuple[int, ...]:
    return tuple(key) + parts


class MessagePassing(Module):
    """
    Graph attention with edge features over N(u) and a learned self-loop edge.

    c_uv = a^T [h~_u || h~_v || e~_uv], alpha = softmax_v LeakyReLU(c_uv),
    h'_u = sum_v alpha_uv (h~_v + e~_uv).
    """

    def __init__(self, d: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        self.d = d
        self.ffn_n = self.add_child("ffn_n", FeedForward(d, d, d, rng, dropout))
        self.ffn_e = self.add_child("ffn_e", FeedForward(d, d, d, rng, dropout))
        self.attention = self.add_param(
            "attention", rng.normal(0.0, 1.0 / np.sqrt(3 * d), size=(3 * d, 1))
        )
        self.self_loop = self.add_param(
            "self_loop", rng.normal(0.0, 1.0 / np.sqrt(d), size=(1, d))
        )

    def __call__(
        self,
        h: Tensor,
        e: Tensor,
        senders: np.ndarray,
        receivers: np.ndarray,
        train: bool = False,
        key: Sequence[int] = (0,),
    ) -> Tensor:
        n = h.shape[0]
        loops = np.arange(n, dtype=np.int64)
        send = np.concatenate([senders, loops])
        recv = np.concatenate([receivers, loops])
        nodes = self.ffn_n(h, train, _key(key, 0))
        edges = ndiff.concat(
            [
                self.ffn_e(e, train, _key(key, 1)),
                ndiff.index_select(self.self_loop, np.zeros(n, dtype=np.int64)),
            ],
            0,
        )
        scores = ndiff.matmul(
            ndiff.concat(
                [ndiff.index_select(nodes, recv), ndiff.index_select(nodes, send), edges], 1
            ),
            self.attention,
        )
        alpha = ndiff.segment_softmax(ndiff.leaky_relu(scores, 0.2), recv, n)
        messages = ndiff.add(ndiff.index_select(nodes, send), edges)
        return ndiff.segment_sum(ndiff.row_scale(messages, alpha), recv, n)


class EncoderBlock(Module):
    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        no_fusion: bool = False,
        adapter: bool = False,
    ):
        super().__init__()
        self.d = d
        self.no_fusion = no_fusion
        self.mpnn_r = self.add_child("mpnn_r", MessagePassing(d, rng, dropout))
        self.mpnn_p = self.add_child("mpnn_p", MessagePassing(d, rng, dropout))
        self.norm_mpnn_r = self.add_child("norm_mpnn_r", LayerNorm(d))
        self.norm_mpnn_p = self.add_child("norm_mpnn_p", LayerNorm(d))
        if no_fusion:
            self.ffn_r = self.add_child("ffn_r", FeedForward(d, d, d, rng, dropout))
            self.ffn_p = self.add_child("ffn_p", FeedForward(d, d, d, rng, dropout))
        else:
            self.ffn1 = self.add_child("ffn1", FeedForward(2 * d, 2 * d, 2 * d, rng, dropout))
            self.ffn2 = self.add_child("ffn2", FeedForward(d, d, d, rng, dropout))
        self.norm_fuse_r = self.add_child("norm_fuse_r", LayerNorm(d))
        self.norm_fuse_p = self.add_child("norm_fuse_p", LayerNorm(d))
        self.adapter_r = self.adapter_p = None
        if adapter:
            self.adapter_r = self.add_child("adapter_r", MultiHeadAttention(d, heads, rng))
            self.adapter_p = self.add_child("adapter_p", MultiHeadAttention(d, heads, rng))
        self.ffn3 = self.add_child("ffn3", FeedForward(2 * d, d, d, rng, dropout))
        self.ffn4 = self.add_child("ffn4", FeedForward(2 * d, d, d, rng, dropout))

    def fuse(
        self, a_r: Tensor, a_p: Tensor, m: int, train: bool, key: Sequence[int]
    ) -> Tuple[Tensor, Tensor]:
        n = a_r.shape[0]
        if self.no_fusion:
            return self.ffn_r(a_r, train, _key(key, 0)), self.ffn_p(a_p, train, _key(key, 1))
        pairs = ndiff.concat([ndiff.slice_axis(a_r, 0, m, 0), a_p], 1)
        fused = self.ffn1(pairs, train, _key(key, 0))
        f_r = ndiff.slice_axis(fused, 0, self.d, 1)
        f_p = ndiff.slice_axis(fused, self.d, 2 * self.d, 1)
        if n > m:
            leaving = self.ffn2(ndiff.slice_axis(a_r, m, n, 0), train, _key(key, 1))
            f_r = ndiff.concat([f_r, leaving], 0)
        return f_r, f_p

    def __call__(
        self,
        state: EncoderState,
        features: ReactionFeatures,
        condition: Optional[Tensor] = None,
        train: bool = False,
        key: Sequence[int] = (0,),
    ) -> EncoderState:
        r, p = features.reactant, features.product
        mp_r = self.mpnn_r(state.h_r, state.e_r, r.senders, r.receivers, train, _key(key, 0))
        mp_p = self.mpnn_p(state.h_p, state.e_p, p.senders, p.receivers, train, _key(key, 1))
        a_r = self.norm_mpnn_r(ndiff.add(state.h_r, mp_r))
        a_p = self.norm_mpnn_p(ndiff.add(state.h_p, mp_p))

        f_r, f_p = self.fuse(a_r, a_p, features.pair_count, train, _key(key, 2))
        h_r = self.norm_fuse_r(ndiff.add(a_r, f_r))
        h_p = self.norm_fuse_p(ndiff.add(a_p, f_p))

        if condition is not None:
            if self.adapter_r is None:
                raise ShapeError("condition matrix given to an encoder without adapter")
            if condition.ndim != 2 or condition.shape[1] != self.d:
                raise ShapeError(f"condition width {condition.shape} does not match {self.d}")
            h_r = ndiff.add(h_r, self.adapter_r(h_r, condition)[0])
            h_p = ndiff.add(h_p, self.adapter_p(h_p, condition)[0])

        e_r = ndiff.add(state.e_r, self._edges(self.ffn3, h_r, r, train, _key(key, 3)))
        e_p = ndiff.add(state.e_p, self._edges(self.ffn4, h_p, p, train, _key(key, 4)))
        return EncoderState(h_r=h_r, h_p=h_p, e_r=e_r, e_p=e_p)

    @staticmethod
    def _edges(ffn: FeedForward, h: Tensor, graph: GraphFeatures, train, key) -> Tensor:
        ends = ndiff.concat(
            [ndiff.index_select(h, graph.senders), ndiff.index_select(h, graph.receivers)], 1
        )
        return ffn(ends, train, key)


class AtomAlignedEncoder(Module):
    """Descriptor embeddings followed by ``layers`` encoder blocks."""

    def __init__(
        self,
        d: int,
        layers: int,
        heads: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        no_fusion: bool = False,
        adapter: bool = False,
    ):
        super().__init__()
        if layers < 1:
            raise ShapeError("the encoder needs at least one layer")
        self.d = d
        self.adapter = adapter
        self.atom_embed = self.add_child("atom_embed", EmbeddingSet(ATOM_DESCRIPTOR_SIZES, d, rng))
        self.bond_embed = self.add_child("bond_embed", EmbeddingSet(BOND_DESCRIPTOR_SIZES, d, rng))
        self.blocks = [
            self.add_child(f"blocks.{i}", EncoderBlock(d, heads, rng, dropout, no_fusion, adapter))
            for i in range(layers)
        ]

    def init_features(self, features: ReactionFeatures) -> EncoderState:
        return init_features(features, self.atom_embed, self.bond_embed)

    def __call__(
        self,
        features: ReactionFeatures,
        condition: Optional[ConditionMatrix] = None,
        train: bool = False,
        key: Sequence[int] = (0,),
        trace: Optional[EncoderTrace] = None,
    ) -> EncoderState:
        matrix = condition.matrix if condition is not None and condition.present else None
        state = self.init_features(features)
        if trace is not None:
            trace.record(state)
        for layer, block in enumerate(self.blocks):
            state = block(state, features, matrix, train, _key(key, layer))
            if trace is not None:
                trace.record(state)
        return state


def init_features(
    features: ReactionFeatures, atom_embed: EmbeddingSet, bond_embed: EmbeddingSet
) -> EncoderState:
    """
    Sum descriptor embeddings into initial node and edge features.

    Raises:
        ShapeError: If a descriptor index falls outside its table
    """
    return EncoderState(
        h_r=atom_embed(features.reactant.atoms),
        h_p=atom_embed(features.product.atoms),
        e_r=bond_embed(features.reactant.bonds),
        e_p=bond_embed(features.product.bonds),
    )


def encode(
    features: ReactionFeatures,
    encoder: AtomAlignedEncoder,
    condition: Optional[ConditionMatrix] = None,
) -> Tuple[Tensor, Tensor]:
    """Run the full encoder in inference mode and return (H_R, H_P)."""
    state = encoder(features, condition)
    return state.h_r, state.h_p


class ConditionEncoder(Module):
    """
    GIN-style molecular encoder for condition molecules.

    Layer update: h_v <- ReLU(MLP(sum_{u in N(v) + v} h_u + sum_{e at v} h_e)),
    with per-layer bond embeddings and a self-loop edge embedding. A molecule
    is the mean of its final node features.
    """

    def __init__(self, d: int, layers: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        self.d = d
        self.atom_embed = self.add_child("atom_embed", EmbeddingSet(ATOM_DESCRIPTOR_SIZES, d, rng))
        self.bond_embeds = []
        self.self_loops = []
        self.mlps = []
        for i in range(layers):
            self.bond_embeds.append(
                self.add_child(f"bond_embed.{i}", EmbeddingSet(BOND_DESCRIPTOR_SIZES, d, rng))
            )
            self.self_loops.append(
                self.add_param(f"self_loop.{i}", rng.normal(0.0, 1.0 / np.sqrt(d), size=(1, d)))
            )
            self.mlps.append(self.add_child(f"mlp.{i}", FeedForward(d, 2 * d, d, rng, dropout)))

    def encode_molecule(
        self, graph: GraphFeatures, train: bool = False, key: Sequence[int] = (0,)
    ) -> Tensor:
        n = graph.num_atoms
        zeros = np.zeros(n, dtype=np.int64)
        h = self.atom_embed(graph.atoms)
        for layer, (bond_embed, loop, mlp) in enumerate(
            zip(self.bond_embeds, self.self_loops, self.mlps)
        ):
            neighbors = ndiff.segment_sum(ndiff.index_select(h, graph.senders), graph.receivers, n)
            edges = ndiff.segment_sum(bond_embed(graph.bonds), graph.receivers, n)
            total = ndiff.add(
                ndiff.add(ndiff.add(h, neighbors), edges), ndiff.index_select(loop, zeros)
            )
            h = ndiff.relu(mlp(total, train, _key(key, layer)))
        return ndiff.mean_rows(h)

    def __call__(
        self, graphs: Sequence[GraphFeatures], train: bool = False, key: Sequence[int] = (0,)
    ) -> ConditionMatrix:
        if not graphs:
            return ConditionMatrix(matrix=None, provenance=ConditionProvenance.ABSENT)
        rows = [self.encode_molecule(g, train, _key(key, i)) for i, g in enumerate(graphs)]
        return ConditionMatrix(
            matrix=ndiff.concat(rows, 0), provenance=ConditionProvenance.MOLECULAR
        )


def condition_encoder_molecular(
    mols: Sequence[MolGraph], encoder: ConditionEncoder
) -> ConditionMatrix:
    """Encode condition molecules into one row each; empty input gives an absent matrix."""
    return encoder([featurize_molecule(mol) for mol in mols])
