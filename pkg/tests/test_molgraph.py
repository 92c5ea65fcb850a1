import logging

import networkx as nx
import numpy as np
import pytest

from rxnalign.errors import AlignmentError, ReactionSmilesError, SmilesError
from rxnalign.molgraph import (
    BondOrder,
    canonical_form,
    canonicalize_smiles,
    combine_fragments,
    parse_reaction,
    parse_smiles,
    reindex,
    tokenize_smiles,
)

CORPUS = [
    "CCO",
    "OC(=O)c1ccccc1",
    "Cl[Pd]Cl",
    "CC(C)(C)[O-].[Na+]",
    "C1CCOC1",
    "CN1CCC[C@H]1c1cccnc1",
    "F/C=C/F",
    "[13CH4]",
    "O=S(=O)(O)O",
    "c1ccc2ccccc2c1",
    "C%10CC%10",
    "[NH4+].[Cl-]",
    "CC#N",
    "Brc1ccc(I)cc1",
    "[CH3:1][C:2](=[O:3])[OH:4]",
]


def _isomorphic(a, b):
    def graph(mol):
        g = nx.Graph()
        for i, atom in enumerate(mol.atoms):
            g.add_node(
                i,
                label=(atom.element, atom.formal_charge, atom.aromatic, mol.total_h[i]),
            )
        for bond in mol.bonds:
            g.add_edge(bond.begin, bond.end, order=int(bond.order))
        return g

    return nx.is_isomorphic(
        graph(a),
        graph(b),
        node_match=lambda x, y: x["label"] == y["label"],
        edge_match=lambda x, y: x["order"] == y["order"],
    )


def test_parse_ethanol():
    mol = parse_smiles("CCO")
    assert [a.symbol for a in mol.atoms] == ["C", "C", "O"]
    assert mol.total_h == (3, 2, 1)
    assert [b.key for b in mol.bonds] == [(0, 1), (1, 2)]


@pytest.mark.parametrize(
    "smiles, hydrogens",
    [
        ("C=O", (2, 0)),
        ("c1ccccc1", (1, 1, 1, 1, 1, 1)),
        ("CS(=O)(=O)C", (3, 0, 0, 0, 3)),
        ("P", (3,)),
        ("[NH4+]", (4,)),
        ("[OH-]", (1,)),
        ("[Pd]", (0,)),
        ("c1cc[nH]c1", (1, 1, 1, 1, 1)),
        ("C#N", (1, 0)),
    ],
)
def test_hydrogen_counts(smiles, hydrogens):
    assert parse_smiles(smiles).total_h == hydrogens


def test_bracket_atom_fields():
    atom = parse_smiles("[13CH3+:7]").atoms[0]
    assert (atom.element, atom.isotope, atom.formal_charge, atom.map_num) == (6, 13, 1, 7)
    assert atom.explicit_h == 3


def test_map_number_zero_means_unmapped():
    assert parse_smiles("[CH4:0]").atoms[0].map_num is None


def test_ring_and_aromatic_bonds():
    mol = parse_smiles("c1ccccc1C")
    ring = [b for b in mol.bonds if b.in_ring]
    assert len(ring) == 6
    assert all(b.order == BondOrder.AROMATIC and b.conjugated for b in ring)
    methyl = mol.bond_between(5, 6)
    assert not methyl.in_ring


def test_conjugation_of_alternating_bonds():
    mol = parse_smiles("C=CC=C")
    assert [b.conjugated for b in mol.bonds] == [True, True, True]
    assert not parse_smiles("C=CCC=C").bond_between(1, 2).conjugated


@pytest.mark.parametrize(
    "smiles, message, position",
    [
        ("C(C", "unclosed branch", 1),
        ("C)", "unmatched", 1),
        ("C1CC", "unbalanced ring-closure digit 1", 1),
        ("C=", "dangling bond symbol", 1),
        ("C$C", "quadruple bonds", 1),
        ("[Xx]", "unknown element symbol", 0),
        ("C%1", "'%' must be followed by two digits", 1),
        ("cC", "aromatic atom outside a ring", 0),
        ("C1C1", "duplicate bond", 3),
        ("C..C", "misplaced '.'", 2),
        ("(C)", "branch without a preceding atom", 0),
        ("[CH3", "unterminated bracket atom", 0),
        ("CX", "unknown element symbol", 1),
    ],
)
def test_parse_errors_carry_positions(smiles, message, position):
    with pytest.raises(SmilesError, match=message) as info:
        parse_smiles(smiles)
    assert info.value.position == position
    assert info.value.category == "input"


def test_empty_smiles():
    with pytest.raises(SmilesError, match="empty SMILES"):
        parse_smiles("   ")


def test_duplicate_map_within_molecule():
    with pytest.raises(SmilesError) as info:
        parse_smiles("[CH3:1][OH:1]")
    assert info.value.reason == "duplicate map"


def test_duplicate_map_across_fragments():
    a, b = parse_smiles("[CH4:1]"), parse_smiles("[OH2:1]")
    with pytest.raises(AlignmentError) as info:
        combine_fragments([a, b])
    assert info.value.reason == "duplicate map"


def test_parse_reaction_segments():
    reactants, reagents, products = parse_reaction("CC(=O)O.OCC>[H+]>CC(=O)OCC.O")
    assert len(reactants) == 2 and len(reagents) == 1 and len(products) == 2


def test_parse_reaction_fragment_groups():
    reactants, reagents, products = parse_reaction("CBr.[Na+].[OH-]>>CO |f:1.2|")
    assert len(reactants) == 2
    assert reactants[1].num_atoms == 2


@pytest.mark.parametrize(
    "text, message",
    [
        ("CCO>CCO", "two '>'"),
        (">>CCO", "empty reactant segment"),
        ("CCO>>", "empty product segment"),
        ("C..C>>C", "empty fragment"),
        ("C.C>>C |f:0.5|", "invalid fragment group"),
        ("C.C>>C |f:1.2|", "spans segments"),
        ("C.C>>C extra", "unexpected trailing text"),
    ],
)
def test_reaction_smiles_errors(text, message):
    with pytest.raises(ReactionSmilesError, match=message):
        parse_reaction(text)


def test_tokenizer_examples():
    assert tokenize_smiles("Cl[Pd]Cl") == ["Cl", "[Pd]", "Cl"]
    assert len(tokenize_smiles("c1ccccc1")) == 8
    assert tokenize_smiles("C%10CC%10") == ["C", "%10", "C", "C", "%10"]


@pytest.mark.parametrize("smiles", CORPUS)
def test_tokenizer_concatenation_identity(smiles):
    assert "".join(tokenize_smiles(smiles)) == smiles


def test_tokenizer_rejects_unknown_characters():
    with pytest.raises(SmilesError, match="untokenizable") as info:
        tokenize_smiles("CC&O")
    assert info.value.position == 2


@pytest.mark.parametrize(
    "variants",
    [
        ("CCO", "OCC", "C(O)C"),
        ("CC(C)O", "OC(C)C", "C(C)(C)O"),
        ("c1ccccc1O", "Oc1ccccc1", "c1cc(O)ccc1"),
        ("C1CCOC1", "O1CCCC1", "C1COCC1"),
        ("[Na+].[OH-]", "[OH-].[Na+]"),
    ],
)
def test_canonical_form_ignores_notation(variants):
    forms = {canonicalize_smiles(text) for text in variants}
    assert len(forms) == 1


def test_canonical_form_examples():
    assert canonicalize_smiles("OCC") == "CCO"
    assert canonicalize_smiles("c1ccccc1") == "c1ccccc1"


def test_canonical_form_ignores_map_numbers():
    assert canonicalize_smiles("[CH3:1][OH:2]") == canonicalize_smiles("CO")


@pytest.mark.parametrize("smiles", CORPUS)
def test_canonical_form_invariant_under_permutation(smiles):
    mol = parse_smiles(smiles)
    reference = canonical_form(mol)
    rng = np.random.default_rng(len(smiles))
    for _ in range(5):
        order = [int(i) for i in rng.permutation(mol.num_atoms)]
        assert canonical_form(reindex(mol, order)) == reference


@pytest.mark.parametrize("smiles", CORPUS)
def test_canonical_text_reparses_to_isomorphic_graph(smiles):
    mol = parse_smiles(smiles)
    assert _isomorphic(mol, parse_smiles(canonical_form(mol)))


def test_long_chain_canonicalizes_without_recursion():
    chain = "C" * 1100
    assert canonical_form(parse_smiles(chain)) == chain
    ring = "C1" + "C" * 1098 + "O1"
    assert canonical_form(parse_smiles(ring)).count("C") == 1099


def test_truncated_tie_search_is_logged(caplog):
    crowded = parse_smiles("CC(C)(C)C(C(C)(C)C)(C(C)(C)C)C(C)(C)C")
    with caplog.at_level(logging.WARNING, logger="rxnalign.molgraph"):
        text = canonical_form(crowded)
    assert _isomorphic(crowded, parse_smiles(text))
    assert "canonical search stopped" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="rxnalign.molgraph"):
        canonical_form(parse_smiles("CC(C)(C)C"))
    assert caplog.text == ""


def test_reindex_is_a_permutation():
    mol = parse_smiles("CC(=O)N")
    moved = reindex(mol, [3, 1, 0, 2])
    assert [a.symbol for a in moved.atoms] == ["N", "C", "C", "O"]
    assert moved.bond_between(1, 3).order == BondOrder.DOUBLE
    with pytest.raises(ValueError):
        reindex(mol, [0, 0, 1, 2])
