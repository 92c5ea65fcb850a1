"""
@module rxncore
@description Atom alignment, leaving groups, reaction centers, reagent typing, selectivity
@version 0.1.0
@last_updated 2026-10-18
@status stable

Indices are 0-based. After alignment the first ``pair_count`` (m) atoms of
the reactant graph correspond one-to-one with the product atoms; reactant
atoms ``m..n-1`` form the leaving group.
"""

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from rxnalign.elements import CARBON, PHOSPHORUS, is_halogen, is_metal
from rxnalign.errors import AlignmentError
from rxnalign.molgraph import MolGraph, canonical_form, combine_fragments, reindex

log = logging.getLogger(__name__)

GAS_CONSTANT = 1.987204e-3  # kcal / (mol K)
DEFAULT_TEMPERATURE = 298.15

SLOT_NAMES = ("catalyst", "solvent1", "solvent2", "reagent1", "reagent2")
COMPONENT_SLOTS: Dict[str, Tuple[int, ...]] = {
    "catalyst": (0,),
    "solvent": (1, 2),
    "reagent": (3, 4),
}


@dataclass(frozen=True)
class ReactionCenter:
    """Reaction-center atoms on each side of an aligned reaction."""

    reactant: FrozenSet[int] = frozenset()
    product: FrozenSet[int] = frozenset()

    @property
    def is_empty(self) -> bool:
        return not self.reactant and not self.product

    @property
    def size(self) -> int:
        return len(self.reactant) + len(self.product)

    def mask(self, n: int, m: int) -> np.ndarray:
        """Boolean mask over the stacked [reactant; product] node rows."""
        out = np.zeros(n + m, dtype=bool)
        out[sorted(self.reactant)] = True
        out[[n + i for i in sorted(self.product)]] = True
        return out


@dataclass(frozen=True)
class AlignedReaction:
    """
    Merged reactant and product graphs sharing indices for mapped atoms.

    Attributes:
        reactant: All reactant fragments merged (n atoms)
        product: All product fragments merged (m atoms)
        pair_count: m, the number of mapped pairs
        leaving_set: Reactant indices m..n-1
        rc_set: Reaction-center atoms on both sides
        condition_mols: Reagent/condition molecules, if any
        condition_text: Raw condition payload kept for reporting
    """

    reactant: MolGraph
    product: MolGraph
    pair_count: int
    leaving_set: FrozenSet[int]
    rc_set: ReactionCenter = field(default_factory=ReactionCenter)
    condition_mols: Tuple[MolGraph, ...] = ()
    condition_text: Optional[str] = None

    @property
    def n(self) -> int:
        return self.reactant.num_atoms

    @property
    def m(self) -> int:
        return self.product.num_atoms


def align_atoms(
    reactants: Sequence[MolGraph],
    products: Sequence[MolGraph],
    condition_mols: Sequence[MolGraph] = (),
    condition_text: Optional[str] = None,
) -> AlignedReaction:
    """
    Reindex reactant atoms so mapped pairs share indices with the product.

    Product atoms keep their order. Reactant atoms are reordered to follow
    the product; unmatched reactant atoms keep their relative order after
    them. Reaction centers are filled in with ``detect_reaction_centers``.

    Args:
        reactants: Reactant fragments
        products: Product fragments
        condition_mols: Optional condition molecules carried along
        condition_text: Optional raw condition payload

    Returns:
        AlignedReaction

    Raises:
        AlignmentError: reason "duplicate map", "unmapped product atom" or
            "unknown map"
    """
    reactant = combine_fragments(reactants)
    product = combine_fragments(products)

    reactant_by_map: Dict[int, int] = {
        atom.map_num: i for i, atom in enumerate(reactant.atoms) if atom.map_num is not None
    }
    order: List[int] = []
    for j, atom in enumerate(product.atoms):
        if atom.map_num is None:
            raise AlignmentError(
                "unmapped product atom", f"product atom {j} ({atom.symbol}) has no map number"
            )
        if atom.map_num not in reactant_by_map:
            raise AlignmentError(
                "unknown map", f"product map number {atom.map_num} not found in reactants"
            )
        order.append(reactant_by_map[atom.map_num])
    matched = set(order)
    order.extend(i for i in range(reactant.num_atoms) if i not in matched)

    m = product.num_atoms
    aligned = AlignedReaction(
        reactant=reindex(reactant, order),
        product=product,
        pair_count=m,
        leaving_set=frozenset(range(m, reactant.num_atoms)),
        condition_mols=tuple(condition_mols),
        condition_text=condition_text,
    )
    return replace(aligned, rc_set=detect_reaction_centers(aligned))


def changed_bonds(rxn: AlignedReaction) -> Set[Tuple[int, int]]:
    """
    Reactant-index pairs of bonds that form, break or change order.

    Bonds between a mapped atom and a leaving atom always count as broken.
    """
    m = rxn.pair_count
    changed = set()
    for bond in rxn.reactant.bonds:
        a, b = bond.key
        if b >= m:
            if a < m:
                changed.add((a, b))
            continue
        other = rxn.product.bond_between(a, b)
        if other is None or other.order != bond.order:
            changed.add((a, b))
    for bond in rxn.product.bonds:
        if rxn.reactant.bond_between(*bond.key) is None:
            changed.add(bond.key)
    return changed


def detect_reaction_centers(rxn: AlignedReaction) -> ReactionCenter:
    """
    Mark reaction-center atoms.

    An atom is marked when it terminates a changed bond, its hydrogen count
    differs from its counterpart, it is a one-hop neighbor of such an atom
    within its own graph, or it belongs to the leaving group. Marks on mapped
    atoms are mirrored to both sides.
    """
    m = rxn.pair_count
    triggers: Set[int] = set()
    for a, b in changed_bonds(rxn):
        triggers.update((a, b))
    for i in range(m):
        if rxn.reactant.total_h[i] != rxn.product.total_h[i]:
            triggers.add(i)

    marked = {i for i in triggers if i < m}
    for i in triggers:
        marked.update(j for j in rxn.reactant.neighbors(i) if j < m)
        if i < m:
            marked.update(rxn.product.neighbors(i))

    center = ReactionCenter(
        reactant=frozenset(marked) | rxn.leaving_set, product=frozenset(marked)
    )
    log.debug(
        "reaction center: %d reactant / %d product atoms", len(center.reactant), len(center.product)
    )
    return center


class ReagentType(enum.IntEnum):
    TYPE_I = 1
    TYPE_II = 2
    TYPE_III = 3


def classify_reagent(mol: MolGraph) -> ReagentType:
    """
    Type I: free metal, ring plus metal or phosphorus, or metal halide.
    Type II: any other molecule containing carbon. Type III: the rest.
    """
    elements = [atom.element for atom in mol.atoms]
    metals = [is_metal(e) for e in elements]
    if elements and all(metals):
        return ReagentType.TYPE_I
    if mol.has_ring() and (any(metals) or PHOSPHORUS in elements):
        return ReagentType.TYPE_I
    halogens = [is_halogen(e) for e in elements]
    if any(metals) and any(halogens) and all(x or y for x, y in zip(metals, halogens)):
        return ReagentType.TYPE_I
    if CARBON in elements:
        return ReagentType.TYPE_II
    return ReagentType.TYPE_III


def order_reagents(mols: Sequence[MolGraph]) -> List[MolGraph]:
    """Sort by (reagent type, canonical SMILES length, canonical SMILES)."""

    def key(mol: MolGraph):
        text = canonical_form(mol)
        return (int(classify_reagent(mol)), len(text), text)

    return sorted(mols, key=key)


def split_reactants_by_mapping(
    reactants: Sequence[MolGraph],
    reagents: Sequence[MolGraph],
    products: Sequence[MolGraph],
) -> Tuple[List[MolGraph], List[MolGraph]]:
    """
    Re-label molecules: reactants are those contributing atoms to the products.

    Returns:
        (reactants, reagents) where former reactants with no map number found
        in the products are appended to the reagents
    """
    product_maps = {
        atom.map_num for mol in products for atom in mol.atoms if atom.map_num is not None
    }
    kept, moved = [], []
    for mol in reactants:
        if any(atom.map_num in product_maps for atom in mol.atoms if atom.map_num is not None):
            kept.append(mol)
        else:
            moved.append(mol)
    return kept, list(reagents) + moved


def _check_positive(name: str, value: float) -> None:
    if not value > 0 or not math.isfinite(value):
        raise ValueError(f"{name} must be a positive finite number, got {value}")


def ratio_to_ddg(
    ratio: float, temperature: float = DEFAULT_TEMPERATURE, gas_constant: float = GAS_CONSTANT
) -> float:
    """ΔΔG‡ in kcal/mol from a product ratio: R·T·ln(ratio)."""
    _check_positive("ratio", ratio)
    _check_positive("temperature", temperature)
    return gas_constant * temperature * math.log(ratio)


def ddg_to_ratio(
    ddg: float, temperature: float = DEFAULT_TEMPERATURE, gas_constant: float = GAS_CONSTANT
) -> float:
    """Product ratio from ΔΔG‡ in kcal/mol: exp(ddg / (R·T))."""
    _check_positive("temperature", temperature)
    return math.exp(ddg / (gas_constant * temperature))


@dataclass(frozen=True)
class SelectivityTarget:
    ddg: float
    temperature: float
    ratio: float

    def __post_init__(self):
        _check_positive("ratio", self.ratio)
        _check_positive("temperature", self.temperature)

    @classmethod
    def from_ratio(cls, ratio: float, temperature: float = DEFAULT_TEMPERATURE):
        return cls(ddg=ratio_to_ddg(ratio, temperature), temperature=temperature, ratio=ratio)

    @classmethod
    def from_ddg(cls, ddg: float, temperature: float = DEFAULT_TEMPERATURE):
        return cls(ddg=ddg, temperature=temperature, ratio=ddg_to_ratio(ddg, temperature))


@dataclass(frozen=True)
class ConditionCombo:
    """
    Five typed condition slots holding canonical SMILES or None.

    Slot order is (catalyst, solvent1, solvent2, reagent1, reagent2).
    """

    catalyst: Optional[str] = None
    solvents: Tuple[Optional[str], Optional[str]] = (None, None)
    reagents: Tuple[Optional[str], Optional[str]] = (None, None)

    def __post_init__(self):
        if len(self.solvents) != 2 or len(self.reagents) != 2:
            raise ValueError("a condition combination has two solvent and two reagent slots")

    @classmethod
    def from_slots(cls, slots: Sequence[Optional[str]]) -> "ConditionCombo":
        if len(slots) != len(SLOT_NAMES):
            raise ValueError(f"expected {len(SLOT_NAMES)} slots, got {len(slots)}")
        values = [slot or None for slot in slots]
        return cls(values[0], (values[1], values[2]), (values[3], values[4]))

    def slots(self) -> Tuple[Optional[str], ...]:
        return (self.catalyst, *self.solvents, *self.reagents)

    def component(self, name: str) -> Tuple[Optional[str], ...]:
        slots = self.slots()
        return tuple(slots[i] for i in COMPONENT_SLOTS[name])
