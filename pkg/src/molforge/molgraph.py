"""Molecular graph data model: validity rules, canonical keys, fingerprints, descriptors.

Graphs are immutable after construction and safe to share across threads.
Bond order 1.5 denotes an aromatic bond; aromatic flags live on atoms and the
two views are kept consistent at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

from .errors import InvalidGraph, LengthMismatch

SUPPORTED_ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "H", "*")

# Allowed total bond order (including implicit/explicit H) per element.
VALENCES = {
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "S": (2, 4, 6),
    "P": (3, 5),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "H": (1,),
    "*": (1,),
}

ATOMIC_MASSES = {
    "C": 12.011,
    "N": 14.007,
    "O": 15.999,
    "S": 32.06,
    "P": 30.974,
    "F": 18.998,
    "Cl": 35.45,
    "Br": 79.904,
    "I": 126.904,
    "H": 1.008,
    "*": 0.0,
}

# Elements that may carry an aromatic flag.
AROMATIC_ELEMENTS = frozenset({"C", "N", "O", "S", "P"})

BOND_ORDERS = (1.0, 1.5, 2.0, 3.0)

AROMATIC_ORDER = 1.5


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: int = 0


@dataclass(frozen=True, order=True)
class Bond:
    """Undirected bond; endpoints normalised so i < j."""

    i: int
    j: int
    order: float

    @property
    def aromatic(self) -> bool:
        return self.order == AROMATIC_ORDER


def _normalise_bond(i: int, j: int, order: float) -> Bond:
    if i > j:
        i, j = j, i
    return Bond(i, j, float(order))


class MolecularGraph:
    """Typed atom/bond graph. Structural invariants are enforced here;
    chemical (valence) validity is a separate verdict via :func:`check_valence`.
    """

    __slots__ = ("atoms", "bonds", "__dict__")

    def __init__(self, atoms: Sequence[Atom], bonds: Iterable[tuple] = ()):
        atoms = tuple(atoms)
        if len(atoms) < 1:
            raise InvalidGraph("graph needs at least one atom")
        norm = []
        for b in bonds:
            if isinstance(b, Bond):
                bond = _normalise_bond(b.i, b.j, b.order)
            else:
                i, j, order = b
                bond = _normalise_bond(int(i), int(j), float(order))
            norm.append(bond)
        self.atoms: tuple[Atom, ...] = atoms
        self.bonds: tuple[Bond, ...] = tuple(sorted(norm))
        self._validate()

    def _validate(self) -> None:
        n = len(self.atoms)
        for idx, atom in enumerate(self.atoms):
            if atom.element not in SUPPORTED_ELEMENTS:
                raise InvalidGraph(f"atom {idx}: unsupported element {atom.element!r}")
            if atom.explicit_h < 0:
                raise InvalidGraph(f"atom {idx}: negative hydrogen count")
            if atom.aromatic and atom.element not in AROMATIC_ELEMENTS:
                raise InvalidGraph(f"atom {idx}: element {atom.element} cannot be aromatic")
        seen = set()
        for bond in self.bonds:
            if bond.i == bond.j:
                raise InvalidGraph(f"self-bond on atom {bond.i}")
            if not (0 <= bond.i < n and 0 <= bond.j < n):
                raise InvalidGraph(f"bond ({bond.i},{bond.j}) out of range")
            if (bond.i, bond.j) in seen:
                raise InvalidGraph(f"duplicate bond ({bond.i},{bond.j})")
            seen.add((bond.i, bond.j))
            if bond.order not in BOND_ORDERS:
                raise InvalidGraph(f"bond ({bond.i},{bond.j}): bad order {bond.order}")
            if bond.aromatic and not (
                self.atoms[bond.i].aromatic and self.atoms[bond.j].aromatic
            ):
                raise InvalidGraph(
                    f"aromatic bond ({bond.i},{bond.j}) joins non-aromatic atom"
                )
        for idx, atom in enumerate(self.atoms):
            if atom.element == "*":
                if atom.formal_charge != 0:
                    raise InvalidGraph(f"attachment point {idx} carries charge")
                deg = sum(1 for b in self.bonds if idx in (b.i, b.j))
                if deg != 1:
                    raise InvalidGraph(
                        f"attachment point {idx} has {deg} bonds, needs exactly 1"
                    )

    # -- basic views ---------------------------------------------------

    def __len__(self) -> int:
        return len(self.atoms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MolecularGraph):
            return NotImplemented
        return self.atoms == other.atoms and self.bonds == other.bonds

    def __hash__(self) -> int:
        return hash((self.atoms, self.bonds))

    def __repr__(self) -> str:
        return f"MolecularGraph({len(self.atoms)} atoms, {len(self.bonds)} bonds)"

    @property
    def is_polymer_context(self) -> bool:
        return any(a.element == "*" for a in self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        """Per-atom list of (neighbor index, bond order)."""
        adj: list[list[tuple[int, float]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.i].append((b.j, b.order))
            adj[b.j].append((b.i, b.order))
        return tuple(tuple(sorted(nbrs)) for nbrs in adj)

    @cached_property
    def bond_lookup(self) -> dict[tuple[int, int], Bond]:
        return {(b.i, b.j): b for b in self.bonds}

    def bond_between(self, i: int, j: int) -> Optional[Bond]:
        if i > j:
            i, j = j, i
        return self.bond_lookup.get((i, j))

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    @cached_property
    def components(self) -> tuple[tuple[int, ...], ...]:
        """Connected components, each sorted, ordered by smallest member."""
        seen = [False] * len(self.atoms)
        comps = []
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                u = stack.pop()
                comp.append(u)
                for v, _ in self.adjacency[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(tuple(sorted(comp)))
        return tuple(comps)

    # -- ring perception ----------------------------------------------

    @cached_property
    def ring_bonds(self) -> frozenset[tuple[int, int]]:
        """Bonds lying on at least one cycle (non-bridge edges)."""
        n = len(self.atoms)
        disc = [-1] * n
        low = [0] * n
        bridges: set[tuple[int, int]] = set()
        timer = 0
        for root in range(n):
            if disc[root] != -1:
                continue
            # iterative DFS; entries are (node, parent-edge key, neighbor iterator)
            stack = [(root, None, iter(self.adjacency[root]))]
            disc[root] = low[root] = timer
            timer += 1
            while stack:
                u, pedge, it = stack[-1]
                advanced = False
                for v, _ in it:
                    ekey = (min(u, v), max(u, v))
                    if ekey == pedge:
                        continue
                    if disc[v] == -1:
                        disc[v] = low[v] = timer
                        timer += 1
                        stack.append((v, ekey, iter(self.adjacency[v])))
                        advanced = True
                        break
                    low[u] = min(low[u], disc[v])
                if not advanced:
                    stack.pop()
                    if stack:
                        p = stack[-1][0]
                        low[p] = min(low[p], low[u])
                        if low[u] > disc[p]:
                            bridges.add((min(p, u), max(p, u)))
        return frozenset(
            (b.i, b.j) for b in self.bonds if (b.i, b.j) not in bridges
        )

    @cached_property
    def ring_atoms(self) -> frozenset[int]:
        atoms = set()
        for i, j in self.ring_bonds:
            atoms.add(i)
            atoms.add(j)
        return frozenset(atoms)

    @cached_property
    def smallest_rings(self) -> tuple[frozenset[int], ...]:
        """Unique smallest cycles, one per ring bond (BFS through each)."""
        rings: list[frozenset[int]] = []
        seen: set[frozenset[int]] = set()
        for i, j in sorted(self.ring_bonds):
            path = self._shortest_path(i, j, skip=(i, j))
            if path is None:
                continue
            ring = frozenset(path)
            if ring not in seen:
                seen.add(ring)
                rings.append(ring)
        return tuple(rings)

    def _shortest_path(self, src, dst, skip):
        from collections import deque

        prev = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if u == dst:
                path = []
                while u is not None:
                    path.append(u)
                    u = prev[u]
                return path
            for v, _ in self.adjacency[u]:
                if (min(u, v), max(u, v)) == skip or v in prev:
                    continue
                prev[v] = u
                queue.append(v)
        return None


def relabel(g: MolecularGraph, perm: Sequence[int]) -> MolecularGraph:
    """Apply a permutation: atom at old index i moves to new index perm[i]."""
    if sorted(perm) != list(range(len(g))):
        raise InvalidGraph("not a permutation")
    atoms = [None] * len(g)
    for i, a in enumerate(g.atoms):
        atoms[perm[i]] = a
    bonds = [(perm[b.i], perm[b.j], b.order) for b in g.bonds]
    return MolecularGraph(atoms, bonds)


def induced_subgraph(g: MolecularGraph, keep: Sequence[int]) -> MolecularGraph:
    """Subgraph on `keep` (original order preserved), bonds reindexed."""
    keep = list(keep)
    remap = {old: new for new, old in enumerate(keep)}
    atoms = [g.atoms[i] for i in keep]
    bonds = [
        (remap[b.i], remap[b.j], b.order)
        for b in g.bonds
        if b.i in remap and b.j in remap
    ]
    return MolecularGraph(atoms, bonds)


# -- valence ----------------------------------------------------------


def allowed_valences(atom: Atom) -> tuple[int, ...]:
    base = VALENCES[atom.element]
    q = atom.formal_charge
    if q == 0:
        return base
    if atom.element == "C":
        # carbocation and carbanion are both trivalent
        return (max(0, 4 - abs(q)),)
    return tuple(sorted({max(0, v + q) for v in base}))


def _order_sums(g: MolecularGraph, idx: int) -> tuple[float, float]:
    """(sum with aromatic=1.5, sum with aromatic=1.0) over incident bonds."""
    full = 0.0
    lenient = 0.0
    for _, order in g.adjacency[idx]:
        full += order
        lenient += 1.0 if order == AROMATIC_ORDER else order
    return full, lenient


@dataclass(frozen=True)
class ValenceReport:
    valid: bool
    violations: tuple[tuple[int, str], ...]


def check_valence(g: MolecularGraph) -> ValenceReport:
    """Verdict on per-atom valence.

    Aromatic ring bonds are counted at the minimal Kekule assignment (order 1
    each) so that lone-pair donors like pyrrole nitrogen pass without
    Kekulization; everything else uses plain bond orders.
    """
    violations = []
    for idx, atom in enumerate(g.atoms):
        _, lenient = _order_sums(g, idx)
        total = lenient + atom.explicit_h
        limit = max(allowed_valences(atom))
        if total > limit + 1e-9:
            violations.append(
                (idx, f"{atom.element}: bond order sum {total:g} exceeds {limit}")
            )
    return ValenceReport(not violations, tuple(violations))


def implicit_hydrogens(element: str, aromatic: bool, orders: Iterable[float]) -> int:
    """Hydrogens to add so a bare organic-subset atom reaches default valence.

    Aromatic atoms count ring bonds at 1.5 against the lowest table entry
    (benzene carbon gets one H, pyridine nitrogen and furan oxygen none).
    """
    if element in ("*", "H"):
        return 0
    entries = VALENCES[element]
    s = sum(orders)
    if aromatic:
        return max(0, int(entries[0] - s))
    for v in entries:
        if s <= v + 1e-9:
            return int(round(v - s))
    return 0


# -- canonical ordering and key ---------------------------------------


def _initial_ranks(g: MolecularGraph) -> list[tuple]:
    keys = []
    for i, a in enumerate(g.atoms):
        keys.append(
            (a.element, len(g.adjacency[i]), a.formal_charge, a.explicit_h, a.aromatic)
        )
    return _compress(keys)


def _compress(keys: list) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g: MolecularGraph, ranks: list[int]) -> list[int]:
    n = len(ranks)
    while True:
        keys = []
        for i in range(n):
            nbrs = sorted((order, ranks[j]) for j, order in g.adjacency[i])
            keys.append((ranks[i], tuple(nbrs)))
        new = _compress(keys)
        if len(set(new)) == len(set(ranks)) and new == ranks:
            return new
        if len(set(new)) == n:
            return new
        ranks = new


def _serialize(g: MolecularGraph, order: list[int]) -> str:
    pos = {atom: p for p, atom in enumerate(order)}
    parts = []
    for atom_idx in order:
        a = g.atoms[atom_idx]
        parts.append(
            f"{a.element}{a.formal_charge:+d}{'a' if a.aromatic else '.'}{a.explicit_h}"
        )
    edges = []
    for b in g.bonds:
        i, j = pos[b.i], pos[b.j]
        if i > j:
            i, j = j, i
        edges.append(f"{i}-{j}:{b.order:g}")
    return ";".join(parts) + "|" + ",".join(sorted(edges))


def canonical_order(g: MolecularGraph) -> list[int]:
    """Atom ordering invariant under relabeling: Morgan-style refinement with
    systematic tie-breaking, minimising the serialized form."""
    ranks = _refine(g, _initial_ranks(g))
    best: list = [None, None]  # serialization, order

    def settle(ranks: list[int]) -> None:
        by_rank: dict[int, list[int]] = {}
        for i, r in enumerate(ranks):
            by_rank.setdefault(r, []).append(i)
        tied = None
        for r in sorted(by_rank):
            if len(by_rank[r]) > 1:
                tied = by_rank[r]
                break
        if tied is None:
            order = sorted(range(len(ranks)), key=lambda i: ranks[i])
            s = _serialize(g, order)
            if best[0] is None or s < best[0]:
                best[0], best[1] = s, order
            return
        for pick in tied:
            branched = [r * 2 + 1 for r in ranks]
            branched[pick] -= 1
            settle(_refine(g, _compress(branched)))

    settle(ranks)
    return best[1]


def canonical_key(g: MolecularGraph) -> str:
    """Stable text key, equal exactly for isomorphic graphs."""
    # graphs are immutable once built, so the key is cached per object
    key = g.__dict__.get("_canonical_key")
    if key is None:
        key = _serialize(g, canonical_order(g))
        g.__dict__["_canonical_key"] = key
    return key


# -- Morgan fingerprints ----------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_FNV_MASK = 0xFFFFFFFFFFFFFFFF


def _fnv1a(parts: Iterable) -> int:
    h = _FNV_OFFSET
    for part in parts:
        enc = str(part).encode()
        for byte in len(enc).to_bytes(2, "big") + enc:
            h ^= byte
            h = (h * _FNV_PRIME) & _FNV_MASK
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset[int]
    n_bits: int = 2048
    radius: int = 2

    def __post_init__(self):
        if any(b < 0 or b >= self.n_bits for b in self.bits):
            raise InvalidGraph("fingerprint bit out of range")


def morgan_fingerprint(
    g: MolecularGraph, radius: int = 2, n_bits: int = 2048
) -> Fingerprint:
    """ECFP-style circular fingerprint.

    Environment identifiers from every round 0..radius fold into the bitset
    by modulo. Attachment points ('*') are excluded: environments are built on
    the subgraph of real atoms only.
    """
    if radius < 0:
        raise InvalidGraph("radius must be >= 0")
    if n_bits < 1 or (n_bits & (n_bits - 1)) != 0:
        raise InvalidGraph("n_bits must be a power of two")
    centers = [i for i, a in enumerate(g.atoms) if a.element != "*"]
    ring = g.ring_atoms
    ids = {}
    for i in centers:
        a = g.atoms[i]
        deg = sum(1 for j, _ in g.adjacency[i] if g.atoms[j].element != "*")
        ids[i] = _fnv1a(
            [a.element, deg, a.formal_charge, a.explicit_h, i in ring, a.aromatic]
        )
    bits = {h % n_bits for h in ids.values()}
    for r in range(1, radius + 1):
        new_ids = {}
        for i in centers:
            nbrs = sorted(
                (order, ids[j])
                for j, order in g.adjacency[i]
                if g.atoms[j].element != "*"
            )
            parts = [r, ids[i]]
            for order, nid in nbrs:
                parts.extend((order, nid))
            new_ids[i] = _fnv1a(parts)
        ids = new_ids
        bits.update(h % n_bits for h in ids.values())
    return Fingerprint(frozenset(bits), n_bits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Intersection over union of the two bitsets; 1.0 when both are empty."""
    if a.n_bits != b.n_bits or a.radius != b.radius:
        raise LengthMismatch(
            f"fingerprints differ: {a.n_bits}/{a.radius} vs {b.n_bits}/{b.radius}"
        )
    union = len(a.bits | b.bits)
    if union == 0:
        return 1.0
    return len(a.bits & b.bits) / union


# -- descriptors -------------------------------------------------------


def descriptors(g: MolecularGraph) -> dict:
    """Structural descriptor block used by route reports and the eval harness."""
    mw = 0.0
    h_donors = 0
    h_acceptors = 0
    attachment = 0
    for i, a in enumerate(g.atoms):
        mw += ATOMIC_MASSES[a.element] + a.explicit_h * ATOMIC_MASSES["H"]
        if a.element == "*":
            attachment += 1
            continue
        h_count = a.explicit_h + sum(
            1 for j, _ in g.adjacency[i] if g.atoms[j].element == "H"
        )
        if a.element in ("N", "O"):
            if h_count >= 1:
                h_donors += 1
            if a.formal_charge <= 0:
                h_acceptors += 1
    ring_count = len(g.bonds) - len(g.atoms) + len(g.components)
    aromatic_rings = 0
    for ring in g.smallest_rings:
        if not all(g.atoms[i].aromatic for i in ring):
            continue
        bonds_ok = all(
            order == AROMATIC_ORDER
            for i in ring
            for j, order in g.adjacency[i]
            if j in ring and j > i
        )
        if bonds_ok:
            aromatic_rings += 1
    rotatable = 0
    heavy_deg = [
        sum(1 for j, _ in g.adjacency[i] if g.atoms[j].element not in ("H", "*"))
        for i in range(len(g))
    ]
    for b in g.bonds:
        if b.order != 1.0 or (b.i, b.j) in g.ring_bonds:
            continue
        if g.atoms[b.i].element in ("H", "*") or g.atoms[b.j].element in ("H", "*"):
            continue
        if heavy_deg[b.i] >= 2 and heavy_deg[b.j] >= 2:
            rotatable += 1
    return {
        "molecular_weight": mw,
        "ring_count": ring_count,
        "aromatic_ring_count": aromatic_rings,
        "rotatable_bonds": rotatable,
        "h_donors": h_donors,
        "h_acceptors": h_acceptors,
        "attachment_points": attachment,
    }


def attachment_points(g: MolecularGraph) -> int:
    """Number of '*' polymer connection sites."""
    return sum(1 for a in g.atoms if a.element == "*")


def replace_attachment_points(g: MolecularGraph) -> MolecularGraph:
    """Monomer view of a polymer repeat unit: '*' atoms become hydrogens on
    their neighbors. Non-polymer graphs are returned unchanged."""
    stars = [i for i, a in enumerate(g.atoms) if a.element == "*"]
    if not stars:
        return g
    extra_h = {}
    for s in stars:
        for j, order in g.adjacency[s]:
            extra_h[j] = extra_h.get(j, 0) + int(order)
    keep = [i for i in range(len(g)) if i not in stars]
    remap = {old: new for new, old in enumerate(keep)}
    atoms = []
    for old in keep:
        a = g.atoms[old]
        if old in extra_h:
            a = Atom(a.element, a.formal_charge, a.aromatic, a.explicit_h + extra_h[old])
        atoms.append(a)
    bonds = [
        (remap[b.i], remap[b.j], b.order)
        for b in g.bonds
        if b.i in remap and b.j in remap
    ]
    return MolecularGraph(atoms, bonds)


# -- JSON exchange format ----------------------------------------------


def to_graph_json(g: MolecularGraph) -> dict:
    return {
        "atoms": [
            {"el": a.element, "charge": a.formal_charge, "aromatic": a.aromatic, "h": a.explicit_h}
            for a in g.atoms
        ],
        "bonds": [[b.i, b.j, b.order] for b in g.bonds],
    }


def graph_from_json(data: dict) -> MolecularGraph:
    try:
        atoms = [
            Atom(
                d["el"],
                int(d.get("charge", 0)),
                bool(d.get("aromatic", False)),
                int(d.get("h", 0)),
            )
            for d in data["atoms"]
        ]
        bonds = [(int(i), int(j), float(o)) for i, j, o in data.get("bonds", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidGraph(f"malformed graph JSON: {exc}") from exc
    return MolecularGraph(atoms, bonds)
