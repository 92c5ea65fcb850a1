"""
@module elements
@description Periodic table symbols, pinned valences and element classes
@version 0.1.0
@last_updated 2026-10-18
@status stable
"""

from typing import Dict, FrozenSet, Tuple

SYMBOLS: Tuple[str, ...] = (
    "H", "He",
    "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar",
    "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe",
    "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy",
    "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt",
    "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn",
    "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf",
    "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)  # fmt: skip

ATOMIC_NUMBER: Dict[str, int] = {symbol: i + 1 for i, symbol in enumerate(SYMBOLS)}

# Smallest entry >= the current bond-order sum is used for implicit hydrogens.
VALENCES: Dict[int, Tuple[int, ...]] = {
    5: (3,),  # B
    6: (4,),  # C
    7: (3,),  # N
    8: (2,),  # O
    15: (3, 5),  # P
    16: (2, 4, 6),  # S
    9: (1,),  # F
    17: (1,),  # Cl
    35: (1,),  # Br
    53: (1,),  # I
}

ORGANIC_SUBSET: FrozenSet[str] = frozenset(
    {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
)
AROMATIC_ORGANIC: FrozenSet[str] = frozenset({"b", "c", "n", "o", "p", "s"})
AROMATIC_BRACKET: FrozenSet[str] = frozenset({"b", "c", "n", "o", "p", "s", "se", "as", "te"})

HALOGENS: FrozenSet[int] = frozenset({9, 17, 35, 53, 85, 117})
NOBLE_GASES: FrozenSet[int] = frozenset({2, 10, 18, 36, 54, 86, 118})
NON_METALS: FrozenSet[int] = (
    frozenset({1, 6, 7, 8, 15, 16, 34, 5, 14, 52, 33}) | HALOGENS | NOBLE_GASES
)

CARBON = 6
PHOSPHORUS = 15


def symbol(atomic_number: int) -> str:
    return SYMBOLS[atomic_number - 1]


def is_metal(atomic_number: int) -> bool:
    """Every element except H, C, N, O, P, S, Se, halogens, noble gases, B, Si, Te, As."""
    return atomic_number not in NON_METALS


def is_halogen(atomic_number: int) -> bool:
    return atomic_number in HALOGENS
