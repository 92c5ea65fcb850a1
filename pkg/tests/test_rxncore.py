import math

import numpy as np
import pytest
from conftest import SUBSTITUTION, aligned
from numpy.testing import assert_array_equal

from rxnalign.errors import AlignmentError
from rxnalign.molgraph import Atom, Bond, BondOrder, MolGraph, parse_reaction, parse_smiles, reindex
from rxnalign.rxncore import (
    GAS_CONSTANT,
    ConditionCombo,
    ReactionCenter,
    ReagentType,
    SelectivityTarget,
    align_atoms,
    classify_reagent,
    ddg_to_ratio,
    order_reagents,
    ratio_to_ddg,
    split_reactants_by_mapping,
)

ORDERS = (BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.AROMATIC)


def _random_reaction(rng):
    """
    Random mapped reactant/product graphs; every reactant atom carries its
    input index + 1 as isotope so it can be traced through alignment.
    """
    k = int(rng.integers(1, 8))
    leaving = int(rng.integers(0, 4))
    n = k + leaving
    maps = list(rng.permutation(np.arange(1, k + 1)))
    extra = k + 1
    atom_maps = []
    for i in range(n):
        if i < k:
            atom_maps.append(int(maps[i]))
        elif rng.random() < 0.5:
            atom_maps.append(extra)
            extra += 1
        else:
            atom_maps.append(None)
    shuffle = [int(i) for i in rng.permutation(n)]
    atom_maps = [atom_maps[i] for i in shuffle]
    elements = [int(rng.choice([6, 7, 8])) for _ in range(n)]
    reactant_h = [int(rng.integers(0, 4)) for _ in range(n)]

    r_bonds = {}
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < 0.3:
                r_bonds[(a, b)] = ORDERS[int(rng.integers(0, 3))]
    reactant = MolGraph(
        atoms=tuple(
            Atom(element=elements[i], map_num=atom_maps[i], isotope=i + 1) for i in range(n)
        ),
        bonds=tuple(Bond(a, b, order) for (a, b), order in r_bonds.items()),
        total_h=tuple(reactant_h),
    )

    mapped = [i for i in range(n) if atom_maps[i] is not None and atom_maps[i] <= k]
    product_order = [mapped[int(j)] for j in rng.permutation(len(mapped))]
    position = {r: j for j, r in enumerate(product_order)}
    p_bonds = {}
    for x in range(len(mapped)):
        for y in range(x + 1, len(mapped)):
            a, b = sorted((mapped[x], mapped[y]))
            order = r_bonds.get((a, b))
            roll = rng.random()
            if roll < 0.15:
                order = None if order is not None else ORDERS[int(rng.integers(0, 3))]
            elif roll < 0.25 and order is not None:
                order = ORDERS[int(rng.integers(0, 3))]
            if order is not None:
                p_bonds[tuple(sorted((position[a], position[b])))] = order
    product_h = [
        reactant_h[r] if rng.random() < 0.8 else int(rng.integers(0, 4)) for r in product_order
    ]
    product = MolGraph(
        atoms=tuple(
            Atom(element=elements[r], map_num=atom_maps[r], isotope=r + 1) for r in product_order
        ),
        bonds=tuple(Bond(a, b, order) for (a, b), order in p_bonds.items()),
        total_h=tuple(product_h),
    )
    return reactant, product


def _oracle(reactant, product):
    """Reaction centers from map numbers alone: (reactant isotopes, product indices)."""
    product_by_map = {atom.map_num: j for j, atom in enumerate(product.atoms)}
    reactant_by_map = {
        atom.map_num: i for i, atom in enumerate(reactant.atoms) if atom.map_num is not None
    }
    mapped = {i for i, atom in enumerate(reactant.atoms) if atom.map_num in product_by_map}
    leaving = set(range(reactant.num_atoms)) - mapped

    def product_order(i, j):
        bond = product.bond_between(
            product_by_map[reactant.atoms[i].map_num], product_by_map[reactant.atoms[j].map_num]
        )
        return None if bond is None else bond.order

    triggers = set()
    for bond in reactant.bonds:
        a, b = bond.begin, bond.end
        if a in mapped and b in mapped:
            if product_order(a, b) != bond.order:
                triggers |= {a, b}
        elif a in mapped or b in mapped:
            triggers |= {a, b}
    for bond in product.bonds:
        a = reactant_by_map[product.atoms[bond.begin].map_num]
        b = reactant_by_map[product.atoms[bond.end].map_num]
        if reactant.bond_between(a, b) is None:
            triggers |= {a, b}
    for i in mapped:
        if reactant.total_h[i] != product.total_h[product_by_map[reactant.atoms[i].map_num]]:
            triggers.add(i)

    marked = triggers & mapped
    for t in triggers:
        marked |= {j for j in reactant.neighbors(t) if j in mapped}
        if t in mapped:
            j = product_by_map[reactant.atoms[t].map_num]
            marked |= {
                reactant_by_map[product.atoms[q].map_num] for q in product.neighbors(j)
            }
    reactant_side = {reactant.atoms[i].isotope for i in marked | leaving}
    product_side = {product_by_map[reactant.atoms[i].map_num] for i in marked}
    return reactant_side, product_side


def _traced(rxn):
    return (
        {rxn.reactant.atoms[i].isotope for i in rxn.rc_set.reactant},
        set(rxn.rc_set.product),
    )


def test_reaction_centers_match_bruteforce_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(250):
        reactant, product = _random_reaction(rng)
        rxn = align_atoms([reactant], [product])
        assert _traced(rxn) == _oracle(reactant, product)


def test_alignment_pairs_share_map_numbers():
    rng = np.random.default_rng(5)
    for _ in range(50):
        reactant, product = _random_reaction(rng)
        rxn = align_atoms([reactant], [product])
        m = rxn.pair_count
        assert rxn.n >= m == rxn.m
        for i in range(m):
            assert rxn.reactant.atoms[i].map_num == rxn.product.atoms[i].map_num
        assert rxn.leaving_set == frozenset(range(m, rxn.n))


def test_alignment_is_idempotent():
    rng = np.random.default_rng(9)
    for _ in range(50):
        reactant, product = _random_reaction(rng)
        rxn = align_atoms([reactant], [product])
        assert align_atoms([rxn.reactant], [rxn.product]) == rxn


def test_reactant_atom_order_does_not_change_centers():
    rng = np.random.default_rng(17)
    for _ in range(50):
        reactant, product = _random_reaction(rng)
        reference = align_atoms([reactant], [product])
        order = [int(i) for i in rng.permutation(reactant.num_atoms)]
        moved = align_atoms([reindex(reactant, order)], [product])
        assert _traced(moved) == _traced(reference)
        assert [a.isotope for a in moved.reactant.atoms[: moved.pair_count]] == [
            a.isotope for a in reference.reactant.atoms[: reference.pair_count]
        ]


def test_substitution_example():
    rxn = aligned(SUBSTITUTION)
    assert (rxn.n, rxn.m, rxn.pair_count) == (5, 4, 4)
    assert rxn.leaving_set == frozenset({4})
    assert rxn.reactant.atoms[4].symbol == "Br"
    assert rxn.rc_set.reactant == frozenset({1, 2, 3, 4})
    assert rxn.rc_set.product == frozenset({1, 2, 3})


def test_identity_reaction_has_empty_center():
    rxn = aligned("[CH3:1][OH:2]>>[CH3:1][OH:2]")
    assert rxn.rc_set.is_empty
    assert not rxn.rc_set.mask(rxn.n, rxn.m).any()


def test_center_mask_layout():
    center = ReactionCenter(reactant=frozenset({0, 3}), product=frozenset({1}))
    assert_array_equal(center.mask(4, 2), [True, False, False, True, False, True])
    assert center.size == 3


@pytest.mark.parametrize(
    "text, reason",
    [
        ("[CH3:1][OH:2]>>[CH3:1]O", "unmapped product atom"),
        ("[CH3:1][OH:2]>>[CH3:1][OH:3]", "unknown map"),
        ("[CH3:1]Br.[OH2:1]>>[CH3:1]O", "duplicate map"),
    ],
)
def test_alignment_errors(text, reason):
    reactants, _, products = parse_reaction(text)
    with pytest.raises(AlignmentError) as info:
        align_atoms(reactants, products)
    assert info.value.reason == reason


@pytest.mark.parametrize(
    "smiles, expected",
    [
        ("[Pd]", ReagentType.TYPE_I),
        ("Cl[Pd]Cl", ReagentType.TYPE_I),
        ("[Na+].[Cl-]", ReagentType.TYPE_I),
        ("c1ccc(P(c2ccccc2)c2ccccc2)cc1", ReagentType.TYPE_I),
        ("CCO", ReagentType.TYPE_II),
        ("CC(C)(C)[O-].[K+]", ReagentType.TYPE_II),
        ("O", ReagentType.TYPE_III),
        ("[Na+].[OH-]", ReagentType.TYPE_III),
    ],
)
def test_classify_reagent(smiles, expected):
    assert classify_reagent(parse_smiles(smiles)) == expected


def test_order_reagents_by_type_then_length():
    mols = [parse_smiles(s) for s in ("O", "CCCO", "Cl[Pd]Cl", "CO")]
    ordered = order_reagents(mols)
    assert [m.num_atoms for m in ordered] == [3, 2, 4, 1]


def test_split_reactants_by_mapping():
    reactants, reagents, products = parse_reaction("[CH3:1][Br:2].CCO.[OH2:3]>O>[CH3:1][OH:3]")
    kept, moved = split_reactants_by_mapping(reactants, reagents, products)
    assert len(kept) == 2
    assert [m.num_atoms for m in moved] == [1, 3]


def test_ratio_to_ddg_examples():
    assert ratio_to_ddg(1.0, 350.0) == 0.0
    assert ratio_to_ddg(math.e) == pytest.approx(GAS_CONSTANT * 298.15, abs=1e-12)
    assert ratio_to_ddg(math.e) == pytest.approx(0.5925, abs=1e-3)


def test_ratio_round_trip():
    rng = np.random.default_rng(1)
    for ratio in np.exp(rng.uniform(-5, 5, size=200)):
        temperature = float(rng.uniform(200, 400))
        back = ddg_to_ratio(ratio_to_ddg(ratio, temperature), temperature)
        assert abs(back - ratio) < 1e-12 * max(1.0, ratio)


@pytest.mark.parametrize("ratio", [0.0, -2.0, float("nan"), float("inf")])
def test_ratio_must_be_positive(ratio):
    with pytest.raises(ValueError):
        ratio_to_ddg(ratio)


def test_selectivity_target_constructors():
    target = SelectivityTarget.from_ratio(10.0, 273.15)
    assert target.ddg == pytest.approx(GAS_CONSTANT * 273.15 * math.log(10.0))
    assert SelectivityTarget.from_ddg(target.ddg, 273.15).ratio == pytest.approx(10.0)


def test_condition_combo_slots():
    combo = ConditionCombo.from_slots(["Cl[Pd]Cl", "CCO", None, "", "O"])
    assert combo.slots() == ("Cl[Pd]Cl", "CCO", None, None, "O")
    assert combo.component("solvent") == ("CCO", None)
    assert combo.component("reagent") == (None, "O")
    with pytest.raises(ValueError):
        ConditionCombo.from_slots(["CCO"])
