"""Retro-transform engine: embed a product pattern, rewrite to reactants.

Rewrite semantics are map-label anchored. Product-pattern bonds are removed;
matched atoms without a map label are deleted; reactant patterns are
instantiated with labeled atoms carried over from the product (their
unmatched neighborhoods follow them) and unlabeled pattern atoms created
fresh. Hydrogen counts on carried atoms shift to preserve total valence;
fresh atoms fill hydrogens to default valence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

from .chemio import PatternAtom, PatternGraph, parse_pattern
from .errors import (
    InvalidGraph,
    MatchBudgetExceeded,
    ParseError,
    TemplateUnsupported,
)
from .molgraph import (
    Atom,
    MolecularGraph,
    canonical_key,
    check_valence,
    implicit_hydrogens,
)

MATCH_BUDGET = 1_000_000


@dataclass(frozen=True)
class MatchEmbedding:
    """Injective map pattern-atom index -> molecule-atom index."""

    mapping: tuple[int, ...]


def _atom_compatible(pa: PatternAtom, g: MolecularGraph, idx: int) -> bool:
    a = g.atoms[idx]
    if pa.element is not None and pa.element != a.element:
        return False
    if pa.aromatic is not None and pa.aromatic != a.aromatic:
        return False
    if pa.charge is not None and pa.charge != a.formal_charge:
        return False
    if pa.in_ring is not None and pa.in_ring != (idx in g.ring_atoms):
        return False
    if pa.degree is not None and pa.degree != len(g.adjacency[idx]):
        return False
    return True


def _bond_compatible(p_order: Optional[float], m_order: float) -> bool:
    return p_order is None or p_order == m_order


def find_matches(
    pattern: PatternGraph, g: MolecularGraph, limit: Optional[int] = None
) -> list[MatchEmbedding]:
    """All injective, constraint-satisfying embeddings in lexicographic order
    of the mapped-atom tuple, truncated to `limit`. Non-induced semantics:
    molecule bonds without a pattern counterpart are ignored.
    """
    P = len(pattern.atoms)
    n = len(g)
    if P > n:
        return []
    # per-pattern-atom candidate prefilter
    candidates = []
    for pa in pattern.atoms:
        cands = [v for v in range(n) if _atom_compatible(pa, g, v)]
        if not cands:
            return []
        candidates.append(cands)
    out: list[MatchEmbedding] = []
    mapping = [-1] * P
    used = [False] * n
    budget = [MATCH_BUDGET]

    def backtrack(p: int) -> bool:
        if p == P:
            out.append(MatchEmbedding(tuple(mapping)))
            return limit is not None and len(out) >= limit
        for v in candidates[p]:
            if used[v]:
                continue
            budget[0] -= 1
            if budget[0] < 0:
                raise MatchBudgetExceeded(
                    f"matching exceeded {MATCH_BUDGET} node expansions"
                )
            ok = True
            for q, p_order in pattern.adjacency[p]:
                u = mapping[q]
                if u < 0:
                    continue  # neighbor not assigned yet
                b = g.bond_between(v, u)
                if b is None or not _bond_compatible(p_order, b.order):
                    ok = False
                    break
            if not ok:
                continue
            mapping[p] = v
            used[v] = True
            if backtrack(p + 1):
                return True
            mapping[p] = -1
            used[v] = False
        return False

    backtrack(0)
    return out


@dataclass(frozen=True)
class RetroTemplate:
    id: str
    product_pattern: PatternGraph
    reactant_patterns: tuple[PatternGraph, ...]
    prior: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.prior <= 1.0):
            raise TemplateUnsupported(f"{self.id}: prior must be in (0, 1]")
        if not self.reactant_patterns:
            raise TemplateUnsupported(f"{self.id}: needs at least one reactant")
        product_labels = set(self.product_pattern.map_index)
        seen: set[int] = set()
        for rp in self.reactant_patterns:
            for label in rp.map_index:
                if label not in product_labels:
                    raise TemplateUnsupported(
                        f"{self.id}: reactant map label {label} missing on product side"
                    )
                if label in seen:
                    raise TemplateUnsupported(
                        f"{self.id}: map label {label} used on two reactant sides"
                    )
                seen.add(label)


def template_from_strings(
    tid: str, product: str, reactants: Sequence[str], prior: float = 1.0
) -> RetroTemplate:
    return RetroTemplate(
        tid,
        parse_pattern(product),
        tuple(parse_pattern(r) for r in reactants),
        prior,
    )


def _lenient_order(order: float) -> float:
    return 1.0 if order == 1.5 else order


def _reactant_side_guard(tid: str, rp: PatternGraph) -> None:
    for a in rp.atoms:
        if a.in_ring is not None or a.degree is not None:
            raise TemplateUnsupported(
                f"{tid}: ring/degree constraints have no meaning on the reactant side"
            )
    for b in rp.bonds:
        if b.order is None:
            raise TemplateUnsupported(
                f"{tid}: '~' bonds have no meaning on the reactant side"
            )


def apply_retro(
    t: RetroTemplate, product: MolecularGraph
) -> list[list[MolecularGraph]]:
    """One-step retrosynthesis: each embedding of the product pattern yields
    one candidate reactant-set; invalid sets dropped, duplicates merged."""
    for rp in t.reactant_patterns:
        _reactant_side_guard(t.id, rp)
    pp = t.product_pattern
    results: list[list[MolecularGraph]] = []
    seen_sets: set[tuple[str, ...]] = set()
    for match in find_matches(pp, product):
        rset = _rewrite(t, product, match)
        if rset is None:
            continue
        keys = tuple(sorted(canonical_key(m) for m in rset))
        if keys in seen_sets:
            continue
        seen_sets.add(keys)
        results.append(sorted(rset, key=canonical_key))
    return results


def _rewrite(
    t: RetroTemplate, product: MolecularGraph, match: MatchEmbedding
) -> Optional[list[MolecularGraph]]:
    pp = t.product_pattern
    mapping = match.mapping
    matched = set(mapping)
    label_to_mol = {
        label: mapping[p_idx] for label, p_idx in pp.map_index.items()
    }
    deleted = {
        mapping[i]
        for i, pa in enumerate(pp.atoms)
        if pa.map_label is None
    }

    # working bond set keyed by molecule atom pair; product-pattern bonds go
    bonds: dict[tuple[int, int], float] = {}
    pattern_pairs = set()
    for b in pp.bonds:
        u, v = mapping[b.i], mapping[b.j]
        pattern_pairs.add((min(u, v), max(u, v)))
    for b in product.bonds:
        key = (b.i, b.j)
        if key in pattern_pairs:
            continue
        if b.i in deleted or b.j in deleted:
            continue
        bonds[key] = b.order

    # nodes: surviving product atoms keep their ids; fresh atoms get new ids
    atoms: dict[int, Atom] = {
        i: a for i, a in enumerate(product.atoms) if i not in deleted
    }
    next_id = len(product.atoms)
    fresh: set[int] = set()
    for rp in t.reactant_patterns:
        local: dict[int, int] = {}
        for p_idx, pa in enumerate(rp.atoms):
            if pa.map_label is not None:
                mol_idx = label_to_mol[pa.map_label]
                base = atoms[mol_idx]
                element = base.element
                if pa.element is not None and pa.element != element:
                    raise TemplateUnsupported(
                        f"{t.id}: label {pa.map_label} changes element "
                        f"{element} -> {pa.element}"
                    )
                charge = base.formal_charge if pa.charge is None else pa.charge
                aromatic = base.aromatic if pa.aromatic is None else pa.aromatic
                atoms[mol_idx] = Atom(element, charge, aromatic, base.explicit_h)
                local[p_idx] = mol_idx
            else:
                if pa.element is None:
                    raise TemplateUnsupported(
                        f"{t.id}: unlabeled reactant atom needs a concrete element"
                    )
                aromatic = bool(pa.aromatic)
                atoms[next_id] = Atom(pa.element, pa.charge or 0, aromatic, 0)
                fresh.add(next_id)
                local[p_idx] = next_id
                next_id += 1
        for b in rp.bonds:
            u, v = local[b.i], local[b.j]
            key = (min(u, v), max(u, v))
            bonds[key] = b.order

    # hydrogen budget: carried atoms keep total valence; fresh atoms fill up
    old_sums = {i: 0.0 for i in atoms}
    for b in product.bonds:
        for end in (b.i, b.j):
            if end in old_sums and end not in fresh:
                old_sums[end] += _lenient_order(b.order)
    new_sums = {i: 0.0 for i in atoms}
    incident: dict[int, list[float]] = {i: [] for i in atoms}
    for (u, v), order in bonds.items():
        new_sums[u] += _lenient_order(order)
        new_sums[v] += _lenient_order(order)
        incident[u].append(order)
        incident[v].append(order)
    final: dict[int, Atom] = {}
    for i, a in atoms.items():
        if i in fresh:
            h = implicit_hydrogens(a.element, a.aromatic, incident[i])
        else:
            h = a.explicit_h + round(old_sums[i] - new_sums[i])
        if h < 0:
            return None
        final[i] = Atom(a.element, a.formal_charge, a.aromatic, h)

    # assemble, split into connected components, valence-check
    ids = sorted(final)
    remap = {old: new for new, old in enumerate(ids)}
    try:
        merged = MolecularGraph(
            [final[i] for i in ids],
            [(remap[u], remap[v], order) for (u, v), order in bonds.items()],
        )
    except InvalidGraph:
        return None
    out = []
    for comp in merged.components:
        keep = list(comp)
        sub_remap = {old: new for new, old in enumerate(keep)}
        sub_bonds = [
            (sub_remap[b.i], sub_remap[b.j], b.order)
            for b in merged.bonds
            if b.i in sub_remap and b.j in sub_remap
        ]
        try:
            sub = MolecularGraph([merged.atoms[i] for i in keep], sub_bonds)
        except InvalidGraph:
            return None
        if not check_valence(sub).valid:
            return None
        out.append(sub)
    return out


def validate_forward(
    t: RetroTemplate, reactants: Sequence[MolecularGraph], product: MolecularGraph
) -> bool:
    """True iff running the template backward from `product` can produce
    exactly this reactant set (by canonical-key comparison)."""
    want = tuple(sorted(canonical_key(m) for m in reactants))
    try:
        for rset in apply_retro(t, product):
            if tuple(sorted(canonical_key(m) for m in rset)) == want:
                return True
    except (TemplateUnsupported, MatchBudgetExceeded):
        return False
    return False


# -- template files -------------------------------------------------------


def load_templates(path) -> list[RetroTemplate]:
    """JSONL loader: {"id", "product", "reactants", "prior"?} per line."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"line {lineno}: bad JSON: {exc.msg}")
            try:
                tid = doc["id"]
                product = doc["product"]
                reactants = doc["reactants"]
            except (KeyError, TypeError) as exc:
                raise ParseError(lineno, f"line {lineno}: missing field {exc}")
            try:
                out.append(
                    template_from_strings(
                        tid, product, reactants, float(doc.get("prior", 1.0))
                    )
                )
            except ParseError as exc:
                raise ParseError(
                    exc.position,
                    f"line {lineno}: template {tid!r}: {exc.reason}",
                ) from None
    return out


def template_from_json(doc: dict, tid: str, prior: float = 1.0) -> RetroTemplate:
    """Inline template off the wire: {"product": ..., "reactants": [...]}."""
    return template_from_strings(
        tid, doc["product"], list(doc["reactants"]), prior
    )
