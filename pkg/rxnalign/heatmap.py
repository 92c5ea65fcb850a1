"""
@module heatmap
@description Attention weight tables and SVG heat-maps over reactant and product graphs
@version 0.1.0
@last_updated 2026-10-18
@status stable
"""

import html
from typing import Dict, List, Sequence, Tuple

import networkx as nx
import numpy as np

from rxnalign.molgraph import MolGraph
from rxnalign.rxncore import AlignedReaction

PANEL = 360
MARGIN = 36
RADIUS = 11


def attention_rows(
    rxn: AlignedReaction, captured: Sequence[Sequence[np.ndarray]], normal_heads: int
) -> List[Dict]:
    """
    Flatten captured cross-attention into one record per (layer, head, query, key).

    Keys 0..n-1 are reactant atoms, n..n+m-1 product atoms.
    """
    n = rxn.n
    symbols = [a.symbol for a in rxn.reactant.atoms] + [a.symbol for a in rxn.product.atoms]
    records = []
    for layer, heads in enumerate(captured):
        for head, weights in enumerate(heads):
            kind = "normal" if head < normal_heads else "restricted"
            for query, row in enumerate(weights):
                for key, weight in enumerate(row):
                    records.append(
                        {
                            "layer": layer,
                            "head": head,
                            "kind": kind,
                            "query": query,
                            "side": "reactant" if key < n else "product",
                            "atom": key if key < n else key - n,
                            "symbol": symbols[key],
                            "weight": float(weight),
                        }
                    )
    return records


def head_summary(
    captured: Sequence[Sequence[np.ndarray]], normal_heads: int
) -> Dict[str, np.ndarray]:
    """Mean weight per key for normal and restricted heads over every layer and query."""
    groups: Dict[str, List[np.ndarray]] = {"normal": [], "restricted": []}
    for heads in captured:
        for head, weights in enumerate(heads):
            groups["normal" if head < normal_heads else "restricted"].append(weights.mean(axis=0))
    return {kind: np.mean(rows, axis=0) for kind, rows in groups.items() if rows}


def _positions(mol: MolGraph, seed: int) -> Dict[int, Tuple[float, float]]:
    if mol.num_atoms == 1:
        return {0: (PANEL / 2, PANEL / 2)}
    raw = nx.spring_layout(mol.to_networkx(), seed=seed)
    coords = np.array([raw[i] for i in range(mol.num_atoms)])
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scaled = MARGIN + (coords - lo) / span * (PANEL - 2 * MARGIN)
    return {i: (float(x), float(y)) for i, (x, y) in enumerate(scaled)}


def _color(value: float) -> str:
    shade = int(round(255 * (1.0 - value)))
    return f"#ff{shade:02x}{shade:02x}"


def _panel(mol: MolGraph, weights: np.ndarray, scale: float, x0: float, title: str, seed: int):
    pos = _positions(mol, seed)
    parts = [
        f'<text x="{x0 + PANEL / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{html.escape(title)}</text>'
    ]
    for bond in mol.bonds:
        (x1, y1), (x2, y2) = pos[bond.begin], pos[bond.end]
        parts.append(
            f'<line x1="{x0 + x1:.1f}" y1="{y1:.1f}" x2="{x0 + x2:.1f}" y2="{y2:.1f}" '
            f'stroke="#555" stroke-width="{1 + int(bond.order != 1)}"/>'
        )
    for i, atom in enumerate(mol.atoms):
        x, y = pos[i]
        value = weights[i] / scale if scale > 0 else 0.0
        parts.append(
            f'<circle cx="{x0 + x:.1f}" cy="{y:.1f}" r="{RADIUS}" fill="{_color(value)}" '
            f'stroke="#333"><title>{html.escape(atom.symbol)}{i}: {weights[i]:.4f}</title>'
            "</circle>"
        )
        parts.append(
            f'<text x="{x0 + x:.1f}" y="{y + 4:.1f}" text-anchor="middle" '
            f'font-size="11">{html.escape(atom.symbol)}</text>'
        )
    return parts


def reaction_svg(rxn: AlignedReaction, weights: np.ndarray, title: str = "", seed: int = 0) -> str:
    """
    Side-by-side reactant and product panels shaded by per-atom weight.

    Args:
        rxn: Aligned reaction
        weights: (n + m,) weights, reactant atoms first
        title: Caption drawn above the panels
        seed: Layout seed

    Returns:
        SVG document text
    """
    weights = np.asarray(weights, dtype=np.float64)
    scale = float(weights.max()) if weights.size else 0.0
    width = 2 * PANEL
    body = _panel(rxn.reactant, weights[: rxn.n], scale, 0.0, f"reactants {title}".strip(), seed)
    body += _panel(rxn.product, weights[rxn.n :], scale, PANEL, f"products {title}".strip(), seed)
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" '
            f'viewBox="0 0 {width} {PANEL}">',
            f'<rect width="{width}" height="{PANEL}" fill="white"/>',
            *body,
            "</svg>",
        ]
    )
