"""
@module molgraph
@description SMILES and reaction SMILES parsing into immutable molecular graphs
@version 0.1.0
@last_updated 2026-10-18
@status stable

Supported grammar: organic-subset and bracket atoms (isotope, chirality,
hydrogen count, charge, ``:map``), bond symbols ``- = # : / \\``, branches,
ring closures (digits and ``%NN``) and dot-separated fragments. Lowercase
aromatic notation is trusted as written; no aromaticity perception or
kekulization is attempted.

Usage:
    from rxnalign.molgraph import parse_smiles, canonical_form

    mol = parse_smiles("OCC")
    canonical_form(mol)  # "CCO"
"""

import enum
import functools
import logging
import math
import re
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx

from rxnalign.elements import (
    AROMATIC_BRACKET,
    AROMATIC_ORGANIC,
    ATOMIC_NUMBER,
    ORGANIC_SUBSET,
    VALENCES,
    symbol,
)
from rxnalign.errors import AlignmentError, ReactionSmilesError, SmilesError

log = logging.getLogger(__name__)

# Regex tokenizer of the Molecular Transformer lineage.
SMILES_TOKEN_PATTERN = re.compile(
    r"(\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|"
    r"\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>|\*|\$|%[0-9]{2}|[0-9])"
)

BRACKET_PATTERN = re.compile(
    r"^(?P<isotope>\d+)?"
    r"(?P<symbol>[A-Z][a-z]?|[a-z][a-z]?)"
    r"(?P<chirality>@@|@)?"
    r"(?:H(?P<hcount>\d*))?"
    r"(?P<charge>\++\d*|-+\d*)?"
    r"(?::(?P<map>\d+))?$"
)

FRAGMENT_GROUP_PATTERN = re.compile(r"f:(\d+(?:\.\d+)+(?:,\d+(?:\.\d+)+)*)")

# Leaves explored when breaking symmetry ties during canonicalization.
CANONICAL_SEARCH_BUDGET = 256


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


class BondStereo(enum.IntEnum):
    NONE = 0
    UP = 1
    DOWN = 2


BOND_SYMBOLS: Dict[str, Tuple[BondOrder, BondStereo]] = {
    "-": (BondOrder.SINGLE, BondStereo.NONE),
    "=": (BondOrder.DOUBLE, BondStereo.NONE),
    "#": (BondOrder.TRIPLE, BondStereo.NONE),
    ":": (BondOrder.AROMATIC, BondStereo.NONE),
    "/": (BondOrder.SINGLE, BondStereo.UP),
    "\\": (BondOrder.SINGLE, BondStereo.DOWN),
}


@dataclass(frozen=True)
class Atom:
    """
    One atom as written in SMILES.

    ``explicit_h`` is None for organic-subset atoms (hydrogens implied by
    valence) and a count, possibly 0, for bracket atoms.
    """

    element: int
    formal_charge: int = 0
    explicit_h: Optional[int] = None
    map_num: Optional[int] = None
    aromatic: bool = False
    isotope: Optional[int] = None
    chirality: str = ""

    @property
    def symbol(self) -> str:
        return symbol(self.element)

    @property
    def bracket(self) -> bool:
        return self.explicit_h is not None


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE
    stereo: BondStereo = BondStereo.NONE
    in_ring: bool = False
    conjugated: bool = False

    @property
    def key(self) -> Tuple[int, int]:
        return (min(self.begin, self.end), max(self.begin, self.end))

    def other(self, atom: int) -> int:
        return self.end if atom == self.begin else self.begin


@dataclass(frozen=True)
class MolGraph:
    """A simple undirected molecular graph with per-atom total hydrogen counts."""

    atoms: Tuple[Atom, ...]
    bonds: Tuple[Bond, ...]
    total_h: Tuple[int, ...]

    def __post_init__(self):
        n = len(self.atoms)
        if len(self.total_h) != n:
            raise ValueError(f"total_h has {len(self.total_h)} entries for {n} atoms")
        if any(h < 0 for h in self.total_h):
            raise ValueError("hydrogen counts must be non-negative")
        seen = set()
        for bond in self.bonds:
            if bond.begin == bond.end or not (0 <= bond.begin < n and 0 <= bond.end < n):
                raise ValueError(f"invalid bond endpoints ({bond.begin}, {bond.end})")
            if bond.key in seen:
                raise ValueError(f"duplicate bond between atoms {bond.key}")
            seen.add(bond.key)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    @cached_property
    def adjacency(self) -> Tuple[Tuple[int, ...], ...]:
        neighbors: List[List[int]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            neighbors[bond.begin].append(bond.end)
            neighbors[bond.end].append(bond.begin)
        return tuple(tuple(sorted(n)) for n in neighbors)

    @cached_property
    def bond_index(self) -> Dict[Tuple[int, int], int]:
        return {bond.key: i for i, bond in enumerate(self.bonds)}

    def neighbors(self, atom: int) -> Tuple[int, ...]:
        return self.adjacency[atom]

    def degree(self, atom: int) -> int:
        return len(self.adjacency[atom])

    def bond_between(self, a: int, b: int) -> Optional[Bond]:
        index = self.bond_index.get((min(a, b), max(a, b)))
        return None if index is None else self.bonds[index]

    def map_numbers(self) -> Tuple[Optional[int], ...]:
        return tuple(atom.map_num for atom in self.atoms)

    def has_ring(self) -> bool:
        return any(bond.in_ring for bond in self.bonds)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.num_atoms))
        graph.add_edges_from(bond.key for bond in self.bonds)
        return graph


class ReactionComponents(NamedTuple):
    reactants: List[MolGraph]
    reagents: List[MolGraph]
    products: List[MolGraph]


def implicit_hydrogens(atom: Atom, bond_orders: Iterable[BondOrder]) -> int:
    """
    Hydrogens implied by the pinned valence table for an organic-subset atom.

    Aromatic bonds count 1.5 and the sum is floored. Aromatic atoms fill up
    to their default valence; others use the smallest allowed valence that
    is at least the current bond-order sum.
    """
    if atom.explicit_h is not None:
        return 0
    valences = VALENCES.get(atom.element)
    if not valences:
        return 0
    used = math.floor(sum(order.valence for order in bond_orders) + 1e-9)
    if atom.aromatic:
        return max(0, valences[0] - used)
    for valence in valences:
        if valence >= used:
            return valence - used
    return 0


def _hydrogen_counts(atoms: Sequence[Atom], bonds: Sequence[Bond]) -> Tuple[int, ...]:
    orders: List[List[BondOrder]] = [[] for _ in atoms]
    for bond in bonds:
        orders[bond.begin].append(bond.order)
        orders[bond.end].append(bond.order)
    return tuple(
        atom.explicit_h if atom.explicit_h is not None else implicit_hydrogens(atom, o)
        for atom, o in zip(atoms, orders)
    )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class SmilesParser:
    """Single-pass SMILES reader producing a MolGraph."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: List[Atom] = []
        self.atom_positions: List[int] = []
        self.bonds: List[Bond] = []
        self.bond_keys = set()
        self.previous: Optional[int] = None
        self.pending: Optional[Tuple[BondOrder, BondStereo]] = None
        self.pending_pos = 0
        self.branches: List[Tuple[int, int]] = []
        # ring digit -> (atom, explicit bond or None, position)
        self.rings: Dict[int, Tuple[int, Optional[Tuple[BondOrder, BondStereo]], int]] = {}

    def fail(self, message: str, position: Optional[int] = None) -> SmilesError:
        return SmilesError(message, self.text, self.pos if position is None else position)

    def parse(self) -> MolGraph:
        if not self.text:
            raise SmilesError("empty SMILES")
        text = self.text
        while self.pos < len(text):
            char = text[self.pos]
            if char == "(":
                if self.previous is None or self.pending is not None:
                    raise self.fail("branch without a preceding atom")
                self.branches.append((self.previous, self.pos))
                self.pos += 1
            elif char == ")":
                if not self.branches:
                    raise self.fail("unmatched ')'")
                if self.pending is not None:
                    raise self.fail("bond symbol before ')'")
                self.previous = self.branches.pop()[0]
                self.pos += 1
            elif char in BOND_SYMBOLS:
                if self.previous is None or self.pending is not None:
                    raise self.fail(f"misplaced bond symbol {char!r}")
                self.pending = BOND_SYMBOLS[char]
                self.pending_pos = self.pos
                self.pos += 1
            elif char == "$":
                raise self.fail("quadruple bonds are not supported")
            elif char.isdigit() or char == "%":
                self._ring_closure()
            elif char == ".":
                if self.pending is not None or self.previous is None:
                    raise self.fail("misplaced '.'")
                self.previous = None
                self.pos += 1
            elif char == "[":
                start = self.pos
                self._add_atom(self._bracket_atom(), start)
            else:
                start = self.pos
                self._add_atom(self._organic_atom(), start)

        if self.pending is not None:
            raise self.fail("dangling bond symbol", self.pending_pos)
        if self.branches:
            raise self.fail("unclosed branch", self.branches[-1][1])
        if self.rings:
            digit, (_, _, position) = min(self.rings.items(), key=lambda kv: kv[1][2])
            raise self.fail(f"unbalanced ring-closure digit {digit}", position)
        return self._finish()

    def _organic_atom(self) -> Atom:
        text = self.text
        two = text[self.pos : self.pos + 2]
        if two in ("Cl", "Br"):
            self.pos += 2
            return Atom(element=ATOMIC_NUMBER[two])
        char = text[self.pos]
        if char in ORGANIC_SUBSET:
            self.pos += 1
            return Atom(element=ATOMIC_NUMBER[char])
        if char in AROMATIC_ORGANIC:
            self.pos += 1
            return Atom(element=ATOMIC_NUMBER[char.upper()], aromatic=True)
        raise self.fail(f"unknown element symbol {char!r}")

    def _bracket_atom(self) -> Atom:
        start = self.pos
        close = self.text.find("]", start)
        if close < 0:
            raise self.fail("unterminated bracket atom")
        body = self.text[start + 1 : close]
        match = BRACKET_PATTERN.match(body)
        if match is None:
            raise self.fail(f"invalid bracket atom [{body}]")
        raw = match.group("symbol")
        aromatic = raw[0].islower()
        if aromatic:
            if raw not in AROMATIC_BRACKET:
                raise self.fail(f"unknown aromatic element symbol {raw!r}")
            element = ATOMIC_NUMBER[raw.capitalize()]
        else:
            if raw not in ATOMIC_NUMBER:
                raise self.fail(f"unknown element symbol {raw!r}")
            element = ATOMIC_NUMBER[raw]

        hcount = match.group("hcount")
        explicit_h = 0 if hcount is None else int(hcount or 1)
        charge = 0
        charge_text = match.group("charge")
        if charge_text:
            sign = 1 if charge_text[0] == "+" else -1
            digits = charge_text.lstrip("+-")
            if digits:
                if len(charge_text) - len(digits) != 1:
                    raise self.fail(f"invalid charge in [{body}]")
                charge = sign * int(digits)
            else:
                charge = sign * len(charge_text)
        map_text = match.group("map")
        map_num = int(map_text) if map_text and int(map_text) > 0 else None
        isotope = match.group("isotope")

        self.pos = close + 1
        return Atom(
            element=element,
            formal_charge=charge,
            explicit_h=explicit_h,
            map_num=map_num,
            aromatic=aromatic,
            isotope=int(isotope) if isotope else None,
            chirality=match.group("chirality") or "",
        )

    def _default_bond(self, a: int, b: int) -> Tuple[BondOrder, BondStereo]:
        if self.atoms[a].aromatic and self.atoms[b].aromatic:
            return BondOrder.AROMATIC, BondStereo.NONE
        return BondOrder.SINGLE, BondStereo.NONE

    def _connect(
        self, a: int, b: int, spec: Optional[Tuple[BondOrder, BondStereo]], position: int
    ) -> None:
        key = (min(a, b), max(a, b))
        if a == b:
            raise self.fail("ring closure onto the same atom", position)
        if key in self.bond_keys:
            raise self.fail("duplicate bond between the same atoms", position)
        order, stereo = spec or self._default_bond(a, b)
        self.bond_keys.add(key)
        self.bonds.append(Bond(begin=a, end=b, order=order, stereo=stereo))

    def _add_atom(self, atom: Atom, start: int) -> None:
        index = len(self.atoms)
        self.atoms.append(atom)
        self.atom_positions.append(start)
        if self.previous is not None:
            self._connect(self.previous, index, self.pending, start)
        self.previous = index
        self.pending = None

    def _ring_closure(self) -> None:
        start = self.pos
        if self.text[start] == "%":
            digits = self.text[start + 1 : start + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.fail("'%' must be followed by two digits")
            digit = int(digits)
            self.pos += 3
        else:
            digit = int(self.text[start])
            self.pos += 1
        if self.previous is None:
            raise self.fail("ring-closure digit without a preceding atom", start)
        bond = self.pending
        self.pending = None
        if digit not in self.rings:
            self.rings[digit] = (self.previous, bond, start)
            return
        opener, open_bond, _ = self.rings.pop(digit)
        if bond is not None and open_bond is not None and bond != open_bond:
            raise self.fail(f"conflicting bond symbols on ring closure {digit}", start)
        self._connect(opener, self.previous, bond or open_bond, start)

    def _finish(self) -> MolGraph:
        maps: Dict[int, int] = {}
        for i, atom in enumerate(self.atoms):
            if atom.map_num is None:
                continue
            if atom.map_num in maps:
                raise SmilesError(
                    f"duplicate atom map number {atom.map_num}",
                    self.text,
                    self.atom_positions[i],
                    reason="duplicate map",
                )
            maps[atom.map_num] = i
        atoms = tuple(self.atoms)
        bonds = tuple(self.bonds)
        mol = ring_and_conjugation_flags(
            MolGraph(atoms=atoms, bonds=bonds, total_h=_hydrogen_counts(atoms, bonds))
        )
        ring_atoms = {i for bond in mol.bonds if bond.in_ring for i in bond.key}
        for i, atom in enumerate(mol.atoms):
            if atom.aromatic and i not in ring_atoms:
                raise SmilesError(
                    "aromatic atom outside a ring", self.text, self.atom_positions[i]
                )
        return mol


def parse_smiles(text: str) -> MolGraph:
    """
    Parse a single- or multi-fragment SMILES string.

    Args:
        text: SMILES text; fragments separated by "." end up in one graph

    Returns:
        MolGraph with ring/conjugation flags and total hydrogen counts

    Raises:
        SmilesError: With the offending position for malformed input
    """
    return SmilesParser(text.strip()).parse()


def _fragment_groups(extension: str) -> List[List[int]]:
    match = FRAGMENT_GROUP_PATTERN.search(extension)
    if match is None:
        return []
    return [[int(i) for i in group.split(".")] for group in match.group(1).split(",")]


def parse_reaction(text: str) -> ReactionComponents:
    """
    Split ``reactants>reagents>products`` and parse every fragment.

    A trailing ``|f:i.j|`` annotation merges the listed fragments (numbered
    across the whole reaction) into one molecule, e.g. an ion pair.

    Raises:
        ReactionSmilesError: Wrong separator count, empty segments or bad groups
        SmilesError: A fragment fails to parse
    """
    text = text.strip()
    body, _, extension = text.partition(" ")
    extension = extension.strip()
    if extension and not (extension.startswith("|") and extension.endswith("|")):
        raise ReactionSmilesError(f"unexpected trailing text {extension!r}")
    if body.count(">") != 2:
        raise ReactionSmilesError(
            f"expected exactly two '>' separators, found {body.count('>')}"
        )
    segments = body.split(">")
    if not segments[0]:
        raise ReactionSmilesError("empty reactant segment")
    if not segments[2]:
        raise ReactionSmilesError("empty product segment")

    fragments: List[Tuple[int, str]] = []
    for side, segment in enumerate(segments):
        if not segment:
            continue
        for piece in segment.split("."):
            if not piece:
                raise ReactionSmilesError(f"empty fragment in {segment!r}")
            fragments.append((side, piece))

    grouped: Dict[int, List[int]] = {}
    owner: Dict[int, int] = {}
    for group in _fragment_groups(extension):
        for index in group:
            if index >= len(fragments) or index in owner:
                raise ReactionSmilesError(f"invalid fragment group {group}")
        if len({fragments[i][0] for i in group}) != 1:
            raise ReactionSmilesError(f"fragment group {group} spans segments")
        for index in group:
            owner[index] = group[0]
        grouped[group[0]] = sorted(group)

    parsed = [parse_smiles(piece) for _, piece in fragments]
    sides: Tuple[List[MolGraph], ...] = ([], [], [])
    for index, (side, _) in enumerate(fragments):
        leader = owner.get(index, index)
        if leader != index:
            continue
        members = grouped.get(index, [index])
        mol = parsed[index] if len(members) == 1 else combine_fragments(
            [parsed[i] for i in members]
        )
        sides[side].append(mol)
    return ReactionComponents(*sides)


# ---------------------------------------------------------------------------
# Graph utilities
# ---------------------------------------------------------------------------


def ring_and_conjugation_flags(mol: MolGraph) -> MolGraph:
    """
    Recompute bond flags.

    in_ring: the bond is not a bridge. conjugated: the bond is aromatic, or
    both endpoints carry at least one double, triple or aromatic bond.
    """
    bridges = {(min(a, b), max(a, b)) for a, b in nx.bridges(mol.to_networkx())}
    unsaturated = set()
    for bond in mol.bonds:
        if bond.order != BondOrder.SINGLE:
            unsaturated.update(bond.key)
    bonds = tuple(
        replace(
            bond,
            in_ring=bond.key not in bridges,
            conjugated=bond.order == BondOrder.AROMATIC
            or (bond.begin in unsaturated and bond.end in unsaturated),
        )
        for bond in mol.bonds
    )
    return replace(mol, bonds=bonds)


def combine_fragments(mols: Sequence[MolGraph]) -> MolGraph:
    """
    Disjoint union of molecules, atoms kept in input order.

    Raises:
        AlignmentError: If two fragments share an atom map number
    """
    atoms: List[Atom] = []
    bonds: List[Bond] = []
    total_h: List[int] = []
    seen_maps = set()
    for mol in mols:
        offset = len(atoms)
        for atom in mol.atoms:
            if atom.map_num is not None:
                if atom.map_num in seen_maps:
                    raise AlignmentError("duplicate map", f"map number {atom.map_num}")
                seen_maps.add(atom.map_num)
        atoms.extend(mol.atoms)
        total_h.extend(mol.total_h)
        bonds.extend(
            replace(bond, begin=bond.begin + offset, end=bond.end + offset)
            for bond in mol.bonds
        )
    return MolGraph(atoms=tuple(atoms), bonds=tuple(bonds), total_h=tuple(total_h))


def reindex(mol: MolGraph, order: Sequence[int]) -> MolGraph:
    """
    Permute atoms so that new atom ``i`` is old atom ``order[i]``.

    Bonds are remapped and sorted by their new endpoint pair.
    """
    if sorted(order) != list(range(mol.num_atoms)):
        raise ValueError("order must be a permutation of the atom indices")
    new_index = {old: new for new, old in enumerate(order)}
    bonds = sorted(
        (
            replace(bond, begin=new_index[bond.begin], end=new_index[bond.end])
            for bond in mol.bonds
        ),
        key=lambda b: b.key,
    )
    return MolGraph(
        atoms=tuple(mol.atoms[i] for i in order),
        bonds=tuple(bonds),
        total_h=tuple(mol.total_h[i] for i in order),
    )


def tokenize_smiles(text: str) -> List[str]:
    """
    Split SMILES into tokens whose concatenation reproduces ``text``.

    Raises:
        SmilesError: If some characters are not covered by any token
    """
    tokens = SMILES_TOKEN_PATTERN.findall(text)
    if "".join(tokens) != text:
        covered = 0
        for token in tokens:
            if text.startswith(token, covered):
                covered += len(token)
            else:
                break
        raise SmilesError("untokenizable character", text, covered)
    return tokens


# ---------------------------------------------------------------------------
# Canonical form
# ---------------------------------------------------------------------------


def _dense_rank(keys: Sequence) -> List[int]:
    lookup = {key: rank for rank, key in enumerate(sorted(set(keys)))}
    return [lookup[key] for key in keys]


def _refine(mol: MolGraph, ranks: List[int]) -> List[int]:
    """Morgan-style refinement until the number of classes stops growing."""
    while True:
        keys = []
        for i in range(mol.num_atoms):
            around = sorted(
                (ranks[j], int(mol.bond_between(i, j).order)) for j in mol.neighbors(i)
            )
            keys.append((ranks[i], tuple(around)))
        refined = _dense_rank(keys)
        if len(set(refined)) == len(set(ranks)):
            return refined
        ranks = refined


def _atom_token(mol: MolGraph, i: int) -> str:
    atom = mol.atoms[i]
    name = atom.symbol
    written = name.lower() if atom.aromatic else name
    hydrogens = mol.total_h[i]
    plain = (
        atom.formal_charge == 0
        and atom.isotope is None
        and (written in AROMATIC_ORGANIC if atom.aromatic else name in ORGANIC_SUBSET)
    )
    if plain:
        orders = [mol.bond_between(i, j).order for j in mol.neighbors(i)]
        plain = Atom(element=atom.element, aromatic=atom.aromatic)
        if implicit_hydrogens(plain, orders) == hydrogens:
            return written
    parts = ["[", str(atom.isotope) if atom.isotope is not None else "", written]
    if hydrogens:
        parts.append("H" if hydrogens == 1 else f"H{hydrogens}")
    charge = atom.formal_charge
    if charge:
        sign = "+" if charge > 0 else "-"
        parts.append(sign if abs(charge) == 1 else f"{sign}{abs(charge)}")
    parts.append("]")
    return "".join(parts)


def _bond_token(mol: MolGraph, a: int, b: int) -> str:
    order = mol.bond_between(a, b).order
    both_aromatic = mol.atoms[a].aromatic and mol.atoms[b].aromatic
    if order == BondOrder.DOUBLE:
        return "="
    if order == BondOrder.TRIPLE:
        return "#"
    if order == BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return "-" if both_aromatic else ""


def _ring_label(digit: int) -> str:
    return str(digit) if digit < 10 else f"%{digit}"


def _write(mol: MolGraph, ranks: Sequence[int]) -> str:
    """Serialize with DFS from the lowest-ranked atom of each component."""
    by_rank = ranks.__getitem__
    visited = [False] * mol.num_atoms
    fragments = []
    for start in sorted(range(mol.num_atoms), key=by_rank):
        if visited[start]:
            continue
        # First pass: spanning tree and ring-closure edges.
        children: Dict[int, List[int]] = {}
        closures: Dict[int, List[int]] = {}
        order: Dict[int, int] = {}
        stack = [(start, -1)]
        while stack:
            atom, parent = stack.pop()
            if visited[atom]:
                continue
            visited[atom] = True
            order[atom] = len(order)
            children[atom] = []
            if parent >= 0:
                children[parent].append(atom)
            for nxt in sorted(mol.neighbors(atom), key=by_rank, reverse=True):
                if not visited[nxt]:
                    stack.append((nxt, atom))
        tree = {(min(p, c), max(p, c)) for p, cs in children.items() for c in cs}
        for bond in mol.bonds:
            if bond.begin in order and bond.key not in tree:
                closures.setdefault(bond.begin, []).append(bond.end)
                closures.setdefault(bond.end, []).append(bond.begin)

        # Second pass: emit text.
        out: List[str] = []
        open_rings: Dict[Tuple[int, int], int] = {}
        free: List[int] = []
        next_digit = [1]

        def allocate() -> int:
            if free:
                free.sort()
                return free.pop(0)
            digit = next_digit[0]
            next_digit[0] += 1
            return digit

        # Explicit stack: text items are appended as-is, atom items are expanded.
        pending: List = [start]
        while pending:
            item = pending.pop()
            if isinstance(item, str):
                out.append(item)
                continue
            atom = item
            out.append(_atom_token(mol, atom))
            for other in sorted(closures.get(atom, []), key=by_rank):
                key = (min(atom, other), max(atom, other))
                if key in open_rings:
                    digit = open_rings.pop(key)
                    out.append(_ring_label(digit))
                    free.append(digit)
                else:
                    digit = allocate()
                    open_rings[key] = digit
                    out.append(_bond_token(mol, atom, other) + _ring_label(digit))
            kids = children[atom]
            expanded: List = []
            for position, child in enumerate(kids):
                last = position == len(kids) - 1
                if not last:
                    expanded.append("(")
                expanded.extend([_bond_token(mol, atom, child), child])
                if not last:
                    expanded.append(")")
            pending.extend(reversed(expanded))
        fragments.append("".join(out))
    return ".".join(sorted(fragments))


def canonical_form(mol: MolGraph) -> str:
    """
    Deterministic SMILES-like text, identical for isomorphic graphs.

    Map numbers and stereo marks are ignored. Atom classes start from
    (element, charge, degree, hydrogen count, aromatic, isotope) and are
    refined over neighbor classes; remaining ties are broken by trying each
    tied atom first and keeping the lexicographically smallest text.
    """
    if mol.num_atoms == 0:
        return ""
    initial = _dense_rank(
        [
            (
                atom.element,
                atom.formal_charge,
                mol.degree(i),
                mol.total_h[i],
                atom.aromatic,
                atom.isotope or 0,
            )
            for i, atom in enumerate(mol.atoms)
        ]
    )
    best: List[Optional[str]] = [None]
    budget = [CANONICAL_SEARCH_BUDGET]
    truncated = [False]

    def search(ranks: List[int]) -> None:
        if len(set(ranks)) == len(ranks):
            text = _write(mol, ranks)
            if best[0] is None or text < best[0]:
                best[0] = text
            budget[0] -= 1
            return
        counts: Dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = min(r for r, c in counts.items() if c > 1)
        for chosen in (i for i, r in enumerate(ranks) if r == tied):
            if budget[0] <= 0 and best[0] is not None:
                truncated[0] = True
                break
            keys = [(r, 0 if (r != tied or i == chosen) else 1) for i, r in enumerate(ranks)]
            search(_refine(mol, _dense_rank(keys)))

    search(_refine(mol, initial))
    if truncated[0]:
        log.warning(
            "canonical search stopped after %d tie-breaking leaves for a %d-atom molecule; "
            "the text may depend on atom order",
            CANONICAL_SEARCH_BUDGET,
            mol.num_atoms,
        )
    return best[0]


@functools.lru_cache(maxsize=65536)
def canonicalize_smiles(text: str) -> str:
    """Canonical text for a SMILES string (cached)."""
    return canonical_form(parse_smiles(text))
