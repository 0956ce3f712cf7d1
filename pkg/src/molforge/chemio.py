"""SMILES-subset reader/writer and SMARTS-subset pattern parser.

Supported SMILES: organic-subset atoms plus bracket atoms with charge and H
count, bonds - = # :, aromatic lowercase, ring closures (digits and %nn),
branches, '.' separators, and '*' attachment points. Stereo markers and
isotopes are hard errors (UnsupportedFeature), never silently dropped.
Aromaticity comes from lowercase input symbols only; there is no perception
pass, so all data is expected pre-aromatized.

Pattern atoms accept [el; a|A; R|!R; Dn; +n|-n; :map] with bonds - = # : ~.
An uppercase element inside a pattern leaves aromaticity unconstrained; use
'A' to demand aliphatic. '~' means any bond order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

from .errors import InvalidGraph, ParseError, UnsupportedFeature
from .molgraph import (
    AROMATIC_ELEMENTS,
    Atom,
    MolecularGraph,
    canonical_order,
    implicit_hydrogens,
)

ORGANIC_SUBSET = ("Cl", "Br", "C", "N", "O", "S", "P", "F", "I")
AROMATIC_TOKENS = {"c": "C", "n": "N", "o": "O", "s": "S", "p": "P"}
BOND_CHARS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": 1.5}

# str.isdigit() accepts superscripts and other unicode digits that int()
# rejects; ring closures and counts are ASCII-only
_DIGITS = frozenset("0123456789")


class _Cursor:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.peek()
        self.pos += 1
        return ch

    def match(self, s: str) -> bool:
        if self.text.startswith(s, self.pos):
            self.pos += len(s)
            return True
        return False

    def digits(self) -> str:
        start = self.pos
        while self.peek() in _DIGITS:
            self.pos += 1
        return self.text[start : self.pos]


def _element_token(cur: _Cursor) -> Optional[tuple[str, bool]]:
    """Try to read an element symbol; returns (element, aromatic) or None."""
    for two in ("Cl", "Br"):
        if cur.match(two):
            return two, False
    ch = cur.peek()
    if ch and ch in "CNOSPFIH":
        cur.take()
        return ch, False
    if ch and ch in AROMATIC_TOKENS:
        cur.take()
        return AROMATIC_TOKENS[ch], True
    if ch == "*":
        cur.take()
        return "*", False
    return None


class _SmilesParser:
    def __init__(self, text: str):
        self.cur = _Cursor(text)
        self.atoms: list[dict] = []
        self.bonds: dict[tuple[int, int], tuple[float, int]] = {}
        self.prev: Optional[int] = None
        self.pending: Optional[tuple[str, int]] = None  # bond char, position
        self.stack: list[tuple[int, int]] = []  # (atom, '(' position)
        self.rings: dict[int, tuple[int, Optional[str], int]] = {}

    def error(self, pos: int, reason: str):
        raise ParseError(pos, reason)

    def run(self) -> MolecularGraph:
        cur = self.cur
        while cur.pos < len(cur.text):
            pos = cur.pos
            ch = cur.peek()
            if ch in BOND_CHARS:
                if self.pending is not None:
                    self.error(pos, "two bond symbols in a row")
                cur.take()
                self.pending = (ch, pos)
            elif ch == "(":
                if self.prev is None:
                    self.error(pos, "branch before any atom")
                if self.pending is not None:
                    self.error(pos, "bond symbol before branch open")
                cur.take()
                self.stack.append((self.prev, pos))
            elif ch == ")":
                if not self.stack:
                    self.error(pos, "unmatched branch close")
                if self.pending is not None:
                    self.error(pos, "dangling bond before branch close")
                cur.take()
                self.prev, _ = self.stack.pop()
            elif ch == ".":
                if self.pending is not None:
                    self.error(pos, "bond symbol before '.'")
                cur.take()
                self.prev = None
            elif ch in _DIGITS or ch == "%":
                self.ring_closure(pos)
            elif ch == "[":
                self.bracket_atom(pos)
            elif ch in "/\\@":
                raise UnsupportedFeature(pos, "stereo markers not supported")
            else:
                tok = _element_token(cur)
                if tok is None:
                    self.error(pos, f"unknown symbol {ch!r}")
                el, aromatic = tok
                if el == "H":
                    self.error(pos, "bare H atom needs brackets")
                self.add_atom(el, aromatic, 0, None, pos)
        end = len(cur.text)
        if self.stack:
            self.error(end, "unclosed branch")
        if self.pending is not None:
            self.error(end, "dangling bond at end of input")
        if self.rings:
            num = sorted(self.rings)[0]
            self.error(end, f"unclosed ring closure {num}")
        return self.build()

    def add_atom(self, el, aromatic, charge, explicit_h, pos) -> None:
        idx = len(self.atoms)
        self.atoms.append(
            {
                "element": el,
                "aromatic": aromatic,
                "charge": charge,
                "explicit_h": explicit_h,  # None = fill to default valence
            }
        )
        if self.prev is not None:
            self.add_bond(self.prev, idx, self.take_pending(), pos)
        elif self.pending is not None:
            self.error(self.pending[1], "bond symbol with no preceding atom")
        self.prev = idx

    def take_pending(self) -> Optional[str]:
        if self.pending is None:
            return None
        ch, _ = self.pending
        self.pending = None
        return ch

    def add_bond(self, i, j, char: Optional[str], pos: int) -> None:
        if i == j:
            self.error(pos, "ring bond to the same atom")
        key = (min(i, j), max(i, j))
        if key in self.bonds:
            self.error(pos, "duplicate bond")
        both_aromatic = self.atoms[i]["aromatic"] and self.atoms[j]["aromatic"]
        if char is None:
            order = 1.5 if both_aromatic else 1.0
        else:
            order = BOND_CHARS[char]
        if order == 1.5 and not both_aromatic:
            self.error(pos, "aromatic bond between non-aromatic atoms")
        self.bonds[key] = (order, pos)

    def ring_closure(self, pos: int) -> None:
        cur = self.cur
        if self.prev is None:
            self.error(pos, "ring closure before any atom")
        if cur.peek() == "%":
            cur.take()
            ds = cur.digits()
            if len(ds) < 2:
                self.error(pos, "'%' needs two digits")
            num = int(ds[:2])
            cur.pos = pos + 1 + 2  # only the first two digits belong to %nn
        else:
            num = int(cur.take())
        char = self.take_pending()
        if num in self.rings:
            other, ochar, opos = self.rings.pop(num)
            if other == self.prev:
                self.error(pos, "ring bond to the same atom")
            if char is not None and ochar is not None and char != ochar:
                self.error(pos, f"ring closure {num} bond symbols disagree")
            self.add_bond(other, self.prev, char or ochar, pos)
        else:
            self.rings[num] = (self.prev, char, pos)

    def bracket_atom(self, pos: int) -> None:
        cur = self.cur
        cur.take()  # consume '['
        if cur.peek() in _DIGITS:
            raise UnsupportedFeature(cur.pos, "isotopes not supported")
        tok = _element_token(cur)
        if tok is None:
            self.error(cur.pos, "expected element symbol in brackets")
        el, aromatic = tok
        if cur.peek() == "@":
            raise UnsupportedFeature(cur.pos, "chirality not supported")
        h = 0
        if cur.peek() == "H":
            cur.take()
            ds = cur.digits()
            h = int(ds) if ds else 1
        charge = 0
        if cur.peek() and cur.peek() in "+-":
            sign = 1 if cur.take() == "+" else -1
            ds = cur.digits()
            if ds:
                charge = sign * int(ds)
            else:
                charge = sign
                while cur.peek() and cur.peek() in "+-":
                    nxt = cur.take()
                    if (nxt == "+") != (sign > 0):
                        self.error(cur.pos - 1, "mixed charge symbols")
                    charge += sign
        if cur.peek() == ":":
            self.error(cur.pos, "atom maps not allowed in molecule SMILES")
        if not cur.match("]"):
            self.error(cur.pos, "expected ']'")
        if el == "*" and (h or charge):
            self.error(pos, "attachment point cannot carry H or charge")
        self.add_atom(el, aromatic, charge, h, pos)

    def build(self) -> MolecularGraph:
        orders: list[list[float]] = [[] for _ in self.atoms]
        for (i, j), (order, _) in self.bonds.items():
            orders[i].append(order)
            orders[j].append(order)
        atoms = []
        for rec, incident in zip(self.atoms, orders):
            h = rec["explicit_h"]
            if h is None:
                h = implicit_hydrogens(rec["element"], rec["aromatic"], incident)
            atoms.append(Atom(rec["element"], rec["charge"], rec["aromatic"], h))
        bonds = [(i, j, order) for (i, j), (order, _) in self.bonds.items()]
        try:
            return MolecularGraph(atoms, bonds)
        except InvalidGraph as exc:
            raise ParseError(len(self.cur.text), str(exc)) from exc


def parse_smiles(text: str) -> MolecularGraph:
    if not text:
        raise ParseError(0, "empty input")
    return _SmilesParser(text).run()


# -- writer -------------------------------------------------------------


def _atom_token(g: MolecularGraph, idx: int) -> str:
    a = g.atoms[idx]
    if a.element == "*":
        return "*"
    sym = a.element.lower() if a.aromatic else a.element
    if a.element != "H" and a.formal_charge == 0:
        refill = implicit_hydrogens(
            a.element, a.aromatic, [o for _, o in g.adjacency[idx]]
        )
        if refill == a.explicit_h:
            return sym
    h = "" if a.explicit_h == 0 else ("H" if a.explicit_h == 1 else f"H{a.explicit_h}")
    q = a.formal_charge
    charge = "" if q == 0 else ("+" if q == 1 else "-" if q == -1 else f"{q:+d}")
    return f"[{sym}{h}{charge}]"


def _bond_token(g: MolecularGraph, i: int, j: int) -> str:
    order = g.bond_between(i, j).order
    if order == 2.0:
        return "="
    if order == 3.0:
        return "#"
    if order == 1.5:
        return ""
    # explicit single between two aromatic atoms (the biphenyl case)
    if g.atoms[i].aromatic and g.atoms[j].aromatic:
        return "-"
    return ""


def write_smiles(g: MolecularGraph) -> str:
    """Deterministic SMILES in canonical atom order; round-trips to an
    isomorphic graph through parse_smiles."""
    order = canonical_order(g)
    rank = {atom: r for r, atom in enumerate(order)}

    # DFS discovery: spanning-tree children and ring-closure back edges.
    # Each back edge is recorded once as (ancestor, descendant).
    tree_child: dict[int, list[int]] = {i: [] for i in range(len(g))}
    back_edges: list[tuple[int, int]] = []
    preorder: dict[int, int] = {}
    roots = []

    def dfs(u: int, parent: Optional[int]) -> None:
        preorder[u] = len(preorder)
        for j in sorted((j for j, _ in g.adjacency[u]), key=lambda j: rank[j]):
            if j == parent:
                continue
            if j in preorder:
                if preorder[j] < preorder[u]:
                    back_edges.append((j, u))
            else:
                tree_child[u].append(j)
                dfs(j, u)

    for comp in sorted(g.components, key=lambda c: min(rank[i] for i in c)):
        root = min(comp, key=lambda i: rank[i])
        roots.append(root)
        dfs(root, None)

    # ring-closure numbering with reuse: open/close per preorder position
    opens: dict[int, list[tuple[int, int]]] = {}
    closes: dict[int, list[tuple[int, int]]] = {}
    for u, v in back_edges:
        opens.setdefault(u, []).append((preorder[v], v))
        closes.setdefault(v, []).append((preorder[u], u))
    numbers: dict[tuple[int, int], int] = {}
    free = list(range(1, 100))
    ring_tokens: dict[int, str] = {i: "" for i in range(len(g))}
    for node in sorted(preorder, key=lambda n: preorder[n]):
        for _, u in sorted(closes.get(node, [])):
            num = numbers[(u, node)]
            ring_tokens[node] += str(num) if num < 10 else f"%{num:02d}"
            free.append(num)
            free.sort()
        for _, v in sorted(opens.get(node, [])):
            if not free:
                raise InvalidGraph("too many concurrent ring closures")
            num = free.pop(0)
            numbers[(node, v)] = num
            tok = str(num) if num < 10 else f"%{num:02d}"
            ring_tokens[node] += _bond_token(g, node, v) + tok

    def emit(node: int) -> str:
        parts = [_atom_token(g, node), ring_tokens[node]]
        kids = tree_child[node]
        for k, child in enumerate(kids):
            seg = _bond_token(g, node, child) + emit(child)
            parts.append(f"({seg})" if k < len(kids) - 1 else seg)
        return "".join(parts)

    return ".".join(emit(root) for root in roots)


# -- SMARTS-subset patterns ---------------------------------------------


@dataclass(frozen=True)
class PatternAtom:
    """One pattern atom; None in a field means unconstrained."""

    element: Optional[str] = None
    aromatic: Optional[bool] = None
    charge: Optional[int] = None
    in_ring: Optional[bool] = None
    degree: Optional[int] = None
    map_label: Optional[int] = None


@dataclass(frozen=True)
class PatternBond:
    i: int
    j: int
    order: Optional[float]  # None = any


class PatternGraph:
    def __init__(self, atoms: Sequence[PatternAtom], bonds: Sequence[PatternBond]):
        if not atoms:
            raise ParseError(0, "empty pattern")
        self.atoms = tuple(atoms)
        norm = []
        for b in bonds:
            i, j = (b.i, b.j) if b.i < b.j else (b.j, b.i)
            norm.append(PatternBond(i, j, b.order))
        self.bonds = tuple(norm)
        labels = [a.map_label for a in self.atoms if a.map_label is not None]
        if len(labels) != len(set(labels)):
            raise ParseError(0, "duplicate map labels in pattern")

    def __len__(self):
        return len(self.atoms)

    def __repr__(self):
        return f"PatternGraph({len(self.atoms)} atoms, {len(self.bonds)} bonds)"

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, Optional[float]], ...], ...]:
        adj: list[list[tuple[int, Optional[float]]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.i].append((b.j, b.order))
            adj[b.j].append((b.i, b.order))
        return tuple(tuple(nbrs) for nbrs in adj)

    @cached_property
    def map_index(self) -> dict[int, int]:
        """map label -> pattern atom index"""
        return {
            a.map_label: i for i, a in enumerate(self.atoms) if a.map_label is not None
        }


_PATTERN_BONDS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": 1.5, "~": None}


class _PatternParser:
    def __init__(self, text: str):
        self.cur = _Cursor(text)
        self.atoms: list[PatternAtom] = []
        self.bonds: dict[tuple[int, int], Optional[float]] = {}
        self.explicit: set[tuple[int, int]] = set()  # bonds with a written symbol
        self.prev: Optional[int] = None
        self.pending: Optional[tuple[str, int]] = None
        self.stack: list[int] = []
        self.rings: dict[int, tuple[int, Optional[str], int]] = {}

    def error(self, pos, reason):
        raise ParseError(pos, reason)

    def run(self) -> PatternGraph:
        cur = self.cur
        while cur.pos < len(cur.text):
            pos = cur.pos
            ch = cur.peek()
            if ch in _PATTERN_BONDS:
                if self.pending is not None:
                    self.error(pos, "two bond symbols in a row")
                cur.take()
                self.pending = (ch, pos)
            elif ch == "(":
                if self.prev is None:
                    self.error(pos, "branch before any atom")
                cur.take()
                self.stack.append(self.prev)
            elif ch == ")":
                if not self.stack:
                    self.error(pos, "unmatched branch close")
                cur.take()
                self.prev = self.stack.pop()
            elif ch == ".":
                raise UnsupportedFeature(pos, "disconnected patterns not supported")
            elif ch == ",":
                raise UnsupportedFeature(pos, "logical OR not supported")
            elif ch == "$":
                raise UnsupportedFeature(pos, "recursive patterns not supported")
            elif ch in "/\\@":
                raise UnsupportedFeature(pos, "stereo markers not supported")
            elif ch in _DIGITS or ch == "%":
                self.ring_closure(pos)
            elif ch == "[":
                self.bracket(pos)
            else:
                tok = _element_token(cur)
                if tok is None:
                    self.error(pos, f"unknown symbol {ch!r}")
                el, aromatic = tok
                if el == "H":
                    self.error(pos, "H is not a pattern atom")
                if el == "*":
                    atom = PatternAtom()
                else:
                    atom = PatternAtom(element=el, aromatic=True if aromatic else None)
                self.add_atom(atom, pos)
        end = len(cur.text)
        if self.stack:
            self.error(end, "unclosed branch")
        if self.pending is not None:
            self.error(end, "dangling bond at end of input")
        if self.rings:
            num = sorted(self.rings)[0]
            self.error(end, f"unclosed ring closure {num}")
        bonds = []
        for (i, j), order in self.bonds.items():
            if (i, j) not in self.explicit and order == 1.0:
                # default bond: aromatic when both ends demand aromatic atoms
                ai, aj = self.atoms[i], self.atoms[j]
                if ai.aromatic is True and aj.aromatic is True:
                    order = 1.5
            bonds.append(PatternBond(i, j, order))
        try:
            return PatternGraph(self.atoms, bonds)
        except ParseError as exc:
            raise ParseError(end, exc.reason) from None

    def take_pending(self):
        if self.pending is None:
            return None
        ch, _ = self.pending
        self.pending = None
        return ch

    def add_atom(self, atom: PatternAtom, pos: int) -> None:
        idx = len(self.atoms)
        self.atoms.append(atom)
        if self.prev is not None:
            self.add_bond(self.prev, idx, self.take_pending(), pos)
        elif self.pending is not None:
            self.error(self.pending[1], "bond symbol with no preceding atom")
        self.prev = idx

    def add_bond(self, i, j, char, pos) -> None:
        if i == j:
            self.error(pos, "ring bond to the same atom")
        key = (min(i, j), max(i, j))
        if key in self.bonds:
            self.error(pos, "duplicate bond")
        if char is None:
            self.bonds[key] = 1.0  # may turn aromatic in run() once atoms settle
        else:
            self.bonds[key] = _PATTERN_BONDS[char]
            self.explicit.add(key)

    def ring_closure(self, pos) -> None:
        cur = self.cur
        if self.prev is None:
            self.error(pos, "ring closure before any atom")
        if cur.peek() == "%":
            cur.take()
            ds = cur.digits()
            if len(ds) < 2:
                self.error(pos, "'%' needs two digits")
            num = int(ds[:2])
            cur.pos = pos + 3
        else:
            num = int(cur.take())
        char = self.take_pending()
        if num in self.rings:
            other, ochar, _ = self.rings.pop(num)
            if char is not None and ochar is not None and char != ochar:
                self.error(pos, f"ring closure {num} bond symbols disagree")
            self.add_bond(other, self.prev, char or ochar, pos)
        else:
            self.rings[num] = (self.prev, char, pos)

    def bracket(self, pos) -> None:
        cur = self.cur
        cur.take()
        element = None
        aromatic = None
        charge = None
        in_ring = None
        degree = None
        map_label = None
        saw_any = False
        while True:
            ch = cur.peek()
            p = cur.pos
            if ch == "":
                self.error(p, "unterminated bracket")
            if ch == "]":
                cur.take()
                break
            if ch == ";":
                cur.take()
                continue
            if ch == ",":
                raise UnsupportedFeature(p, "logical OR not supported")
            if ch == "$":
                raise UnsupportedFeature(p, "recursive patterns not supported")
            if ch == "@":
                raise UnsupportedFeature(p, "chirality not supported")
            if ch in _DIGITS:
                raise UnsupportedFeature(p, "isotopes not supported")
            saw_any = True
            if ch == "!":
                cur.take()
                if cur.peek() != "R":
                    self.error(cur.pos, "'!' supported only as '!R'")
                cur.take()
                if in_ring is not None:
                    self.error(p, "conflicting ring constraints")
                in_ring = False
            elif ch == "R":
                cur.take()
                if in_ring is not None:
                    self.error(p, "conflicting ring constraints")
                in_ring = True
            elif ch == "a":
                cur.take()
                if aromatic is not None:
                    self.error(p, "conflicting aromatic constraints")
                aromatic = True
            elif ch == "A":
                cur.take()
                if aromatic is not None:
                    self.error(p, "conflicting aromatic constraints")
                aromatic = False
            elif ch == "D":
                cur.take()
                ds = cur.digits()
                if not ds:
                    self.error(cur.pos, "'D' needs a digit")
                if degree is not None:
                    self.error(p, "conflicting degree constraints")
                degree = int(ds)
            elif ch in "+-":
                cur.take()
                ds = cur.digits()
                q = int(ds) if ds else 1
                if charge is not None:
                    self.error(p, "conflicting charge constraints")
                charge = q if ch == "+" else -q
            elif ch == ":":
                cur.take()
                ds = cur.digits()
                if not ds:
                    self.error(cur.pos, "map label needs digits")
                if map_label is not None:
                    self.error(p, "two map labels on one atom")
                map_label = int(ds)
            elif ch == "*":
                cur.take()
                if element is not None:
                    self.error(p, "conflicting element constraints")
                element = "*"  # sentinel, cleared below
            else:
                tok = _element_token(cur)
                if tok is None:
                    self.error(p, f"unknown pattern primitive {ch!r}")
                el, lower = tok
                if el == "H":
                    raise UnsupportedFeature(p, "H-count constraints not supported")
                if element is not None:
                    self.error(p, "conflicting element constraints")
                element = el
                if lower:
                    if aromatic is False:
                        self.error(p, "conflicting aromatic constraints")
                    aromatic = True
        if not saw_any:
            self.error(pos, "empty bracket")
        if element == "*":
            element = None
        self.add_atom(
            PatternAtom(element, aromatic, charge, in_ring, degree, map_label), pos
        )


def parse_pattern(text: str) -> PatternGraph:
    if not text:
        raise ParseError(0, "empty input")
    return _PatternParser(text).run()


# -- line-oriented files ------------------------------------------------


def read_smiles_lines(path) -> list[tuple[int, str]]:
    """(line number, SMILES) pairs from a text file; '#' comments and blank
    lines skipped. Line numbers are 1-based."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                out.append((lineno, line))
    return out
