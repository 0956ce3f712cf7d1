"""A* retrosynthetic planner on an AND-OR tree.

Molecule nodes (OR) alternate with reaction nodes (AND). Selection picks the
frontier molecule minimizing J = J_current + J_heuristic, where J_current
sums -log(reaction probability) along the root path and J_heuristic is a
weighted multi-choice score. Expansion asks a pluggable predictor for up to
k template proposals, applies each, and grafts the surviving reactant sets.

Two stop policies: "first" returns as soon as the root is solved (the paper
protocol); "optimal" keeps searching branch-and-bound style until no frontier
node could beat the best known route, which makes the zero-heuristic planner
provably minimal-cost on finite networks.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

from .chemio import parse_smiles, read_smiles_lines, write_smiles
from .errors import (
    BadDistribution,
    EmptyFrontier,
    InconsistentTree,
    MatchBudgetExceeded,
    TemplateUnsupported,
)
from .molgraph import MolecularGraph, canonical_key
from .templates import RetroTemplate, apply_retro, template_from_json, validate_forward

HEURISTIC_SCORES = (0.0, 1.0, 2.5, 4.5, 7.0)

DEFAULT_K = 50
DEFAULT_MAX_ITERATIONS = 300
DEFAULT_MAX_SECONDS = 30.0


def heuristic_score(probs: Sequence[float]) -> float:
    """Probability-weighted choice score over [0, 1, 2.5, 4.5, 7]."""
    if len(probs) != len(HEURISTIC_SCORES):
        raise BadDistribution(f"need {len(HEURISTIC_SCORES)} probabilities")
    if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-6:
        raise BadDistribution("probabilities must be >= 0 and sum to 1")
    return sum(p * s for p, s in zip(probs, HEURISTIC_SCORES))


# -- stock ---------------------------------------------------------------


class Stock:
    """Purchasable molecules, matched by exact canonical key."""

    def __init__(self, keys: Optional[set[str]] = None, source: Optional[str] = None):
        self.keys: set[str] = set(keys or ())
        self.source = source

    @classmethod
    def from_file(cls, path) -> "Stock":
        keys = set()
        for lineno, smiles in read_smiles_lines(path):
            keys.add(canonical_key(parse_smiles(smiles)))
        return cls(keys, source=str(path))

    @classmethod
    def from_smiles(cls, smiles_list: Sequence[str]) -> "Stock":
        return cls({canonical_key(parse_smiles(s)) for s in smiles_list})

    def __contains__(self, key: str) -> bool:
        return key in self.keys

    def has_graph(self, g: MolecularGraph) -> bool:
        return canonical_key(g) in self.keys

    def __len__(self) -> int:
        return len(self.keys)


# -- provider interfaces ---------------------------------------------------


@dataclass(frozen=True)
class Proposal:
    template_id: str
    prob: float
    template: Optional[RetroTemplate] = None  # inline template, if supplied


class Predictor(Protocol):
    def __call__(self, product: MolecularGraph, context: str, k: int) -> list[Proposal]: ...


HeuristicProvider = Callable[..., Sequence[float]]


class TableProposalProvider:
    """In-process predictor backed by a product -> proposals table."""

    def __init__(self, table: dict[str, list[tuple[str, float]]]):
        for key, props in table.items():
            probs = [p for _, p in props]
            if any(not (0.0 < p <= 1.0) for p in probs):
                raise BadDistribution(f"proposal probability out of (0,1] for {key}")
            if probs != sorted(probs, reverse=True):
                raise BadDistribution(f"proposals for {key} not sorted descending")
        self.table = table

    @classmethod
    def from_file(cls, path) -> "TableProposalProvider":
        """JSONL rows: {"product": smiles, "proposals": [{template_id, prob}]}"""
        table: dict[str, list[tuple[str, float]]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                key = canonical_key(parse_smiles(doc["product"]))
                table[key] = [
                    (p["template_id"], float(p["prob"])) for p in doc["proposals"]
                ]
        return cls(table)

    def __call__(self, product: MolecularGraph, context: str, k: int) -> list[Proposal]:
        rows = self.table.get(canonical_key(product), [])
        return [Proposal(tid, prob) for tid, prob in rows[:k]]


class InlineTableProvider:
    """Predictor whose proposals carry full inline templates (no shared
    template db needed); used by synthetic-network tests."""

    def __init__(self, table: dict[str, list[tuple[RetroTemplate, float]]]):
        self.table = table

    def __call__(self, product: MolecularGraph, context: str, k: int) -> list[Proposal]:
        rows = self.table.get(canonical_key(product), [])
        return [Proposal(t.id, prob, template=t) for t, prob in rows[:k]]


class FixedLogitsHeuristic:
    """Softmax of fixed logits; the all-zeros default spreads mass evenly."""

    def __init__(self, logits: Sequence[float] = (0.0,) * 5):
        if len(logits) != 5:
            raise BadDistribution("need 5 logits")
        mx = max(logits)
        exps = [math.exp(x - mx) for x in logits]
        z = sum(exps)
        self.probs = tuple(e / z for e in exps)

    def __call__(self, target: str, step: int, template=None, reactants=None):
        return self.probs


class ZeroHeuristic:
    """Always 'readily available': J_heuristic = 0 (admissible everywhere)."""

    def __call__(self, target: str, step: int, template=None, reactants=None):
        return (1.0, 0.0, 0.0, 0.0, 0.0)


# -- tree ------------------------------------------------------------------


class MoleculeNode:
    __slots__ = (
        "graph", "key", "parent", "children", "solved", "expanded",
        "in_stock", "depth", "j_current", "j_heuristic",
    )

    def __init__(
        self,
        graph: MolecularGraph,
        parent: Optional["ReactionNode"],
        in_stock: bool,
        key: Optional[str] = None,
    ):
        self.graph = graph
        self.key = key if key is not None else canonical_key(graph)
        self.parent = parent
        self.children: list[ReactionNode] = []
        self.in_stock = in_stock
        self.solved = in_stock
        self.expanded = False
        self.depth = 0 if parent is None else parent.parent.depth + 1
        self.j_current = 0.0 if parent is None else parent.parent.j_current + parent.cost
        self.j_heuristic = 0.0

    @property
    def j(self) -> float:
        return self.j_current + self.j_heuristic

    def ancestors_keys(self) -> set[str]:
        keys = set()
        node = self
        while node is not None:
            keys.add(node.key)
            node = node.parent.parent if node.parent else None
        return keys


class ReactionNode:
    __slots__ = ("parent", "template", "template_id", "prob", "cost", "children", "solved")

    def __init__(self, parent: MoleculeNode, template: RetroTemplate, prob: float):
        self.parent = parent
        self.template = template
        self.template_id = template.id
        self.prob = prob
        self.cost = -math.log(prob)
        self.children: list[MoleculeNode] = []
        self.solved = False


class SearchTree:
    def __init__(self, target: MolecularGraph, stock: Stock):
        self.stock = stock
        self.root = MoleculeNode(target, None, stock.has_graph(target))
        self.molecule_nodes: list[MoleculeNode] = [self.root]
        self.reaction_nodes: list[ReactionNode] = []


class Frontier:
    """Min-heap of unexpanded, unsolved molecule leaves; FIFO tie-break via
    an insertion sequence number; stale entries skipped lazily."""

    def __init__(self):
        self.heap: list[tuple[float, int, MoleculeNode]] = []
        self.seq = 0

    def push(self, node: MoleculeNode) -> None:
        heapq.heappush(self.heap, (node.j, self.seq, node))
        self.seq += 1

    def pop(self) -> MoleculeNode:
        while self.heap:
            j, seq, node = heapq.heappop(self.heap)
            if node.expanded or node.solved:
                continue
            if j != node.j:  # J changed since insertion: reinsert at fresh J
                heapq.heappush(self.heap, (node.j, seq, node))
                continue
            return node
        raise EmptyFrontier("frontier is empty: search space exhausted")

    def peek_j(self) -> Optional[float]:
        while self.heap:
            j, seq, node = self.heap[0]
            if node.expanded or node.solved:
                heapq.heappop(self.heap)
                continue
            if j != node.j:
                heapq.heappop(self.heap)
                heapq.heappush(self.heap, (node.j, seq, node))
                continue
            return j
        return None

    def __len__(self) -> int:
        return sum(1 for _, _, n in self.heap if not (n.expanded or n.solved))


def select_next(tree: SearchTree, frontier: Frontier) -> MoleculeNode:
    return frontier.pop()


def expand(
    tree: SearchTree,
    node: MoleculeNode,
    predictor: Predictor,
    templates_db: Optional[dict[str, RetroTemplate]],
    k: int = DEFAULT_K,
    context: str = "",
    stats: Optional[dict] = None,
) -> list[ReactionNode]:
    """One predictor call, up to k proposals applied; returns new reaction
    nodes grafted under `node`."""
    if node.expanded:
        raise InconsistentTree("node already expanded")
    if node.in_stock:
        raise InconsistentTree("stock molecules are never expanded")
    stats = stats if stats is not None else {}
    proposals = predictor(node.graph, context, k)[:k]
    stats["predictor_calls"] = stats.get("predictor_calls", 0) + 1
    ancestors = node.ancestors_keys()
    new_nodes: list[ReactionNode] = []
    for prop in proposals:
        if not (0.0 < prop.prob <= 1.0):
            stats["bad_proposals"] = stats.get("bad_proposals", 0) + 1
            continue
        template = prop.template
        if template is None:
            template = (templates_db or {}).get(prop.template_id)
        if template is None:
            stats["unknown_templates"] = stats.get("unknown_templates", 0) + 1
            continue
        try:
            reactant_sets = apply_retro(template, node.graph)
        except (TemplateUnsupported, MatchBudgetExceeded):
            stats["skipped_templates"] = stats.get("skipped_templates", 0) + 1
            continue
        if not reactant_sets:
            stats["empty_proposals"] = stats.get("empty_proposals", 0) + 1
            continue
        for rset in reactant_sets:
            keys = [canonical_key(m) for m in rset]
            # cycle guard: drop the reaction if any reactant repeats an ancestor
            if any(k in ancestors for k in keys):
                stats["cycle_pruned"] = stats.get("cycle_pruned", 0) + 1
                continue
            rnode = ReactionNode(node, template, prop.prob)
            for m, mkey in zip(rset, keys):
                child = MoleculeNode(m, rnode, mkey in tree.stock, key=mkey)
                rnode.children.append(child)
                tree.molecule_nodes.append(child)
            node.children.append(rnode)
            tree.reaction_nodes.append(rnode)
            new_nodes.append(rnode)
    node.expanded = True
    stats["expansions"] = stats.get("expansions", 0) + 1
    return new_nodes


def update_solved(tree: SearchTree, changed: Sequence[ReactionNode]) -> bool:
    """Propagate solved flags bottom-up from the changed reactions; returns
    whether the root is solved."""
    pending: list[ReactionNode] = list(changed)
    while pending:
        rnode = pending.pop()
        solved = all(c.solved for c in rnode.children)
        if solved and not rnode.solved:
            rnode.solved = True
            parent = rnode.parent
            if not parent.solved:
                parent.solved = True
                if parent.parent is not None:
                    pending.append(parent.parent)
    return tree.root.solved


def recompute_solved_from_scratch(tree: SearchTree) -> dict[int, bool]:
    """Reference recomputation used by consistency checks (tests only)."""
    flags: dict[int, bool] = {}

    def mol_solved(node: MoleculeNode) -> bool:
        # no short-circuit: every node must land in the flag map
        child_flags = [rxn_solved(r) for r in node.children]
        result = node.in_stock or any(child_flags)
        flags[id(node)] = result
        return result

    def rxn_solved(rnode: ReactionNode) -> bool:
        child_flags = [mol_solved(c) for c in rnode.children]
        return all(child_flags)

    mol_solved(tree.root)
    return flags


# -- routes ----------------------------------------------------------------


@dataclass(frozen=True)
class RouteReaction:
    template_id: str
    prob: float
    cost: float
    reactants: tuple["Route", ...]


@dataclass(frozen=True)
class Route:
    smiles: str
    in_stock: bool
    reaction: Optional[RouteReaction] = None

    @property
    def steps(self) -> int:
        if self.reaction is None:
            return 0
        return 1 + sum(r.steps for r in self.reaction.reactants)

    @property
    def total_cost(self) -> float:
        if self.reaction is None:
            return 0.0
        return self.reaction.cost + sum(r.total_cost for r in self.reaction.reactants)


def route_to_json(route: Route) -> dict:
    if route.reaction is None and route.in_stock:
        return {"target": route.smiles, "in_stock": True}
    return _route_node_json(route)


def _route_node_json(route: Route) -> dict:
    doc: dict = {"smiles": route.smiles, "in_stock": route.in_stock}
    if route.reaction is not None:
        doc["reaction"] = {
            "template_id": route.reaction.template_id,
            "prob": route.reaction.prob,
            "cost": route.reaction.cost,
            "reactants": [_route_node_json(r) for r in route.reaction.reactants],
        }
    return doc


def _min_subtree_cost(node: MoleculeNode, memo: dict[int, float]) -> float:
    if node.in_stock:
        return 0.0
    cached = memo.get(id(node))
    if cached is not None:
        return cached
    best = None
    for rnode in node.children:
        if not rnode.solved:
            continue
        c = rnode.cost + sum(_min_subtree_cost(ch, memo) for ch in rnode.children)
        if best is None or c < best:
            best = c
    if best is None:
        raise InconsistentTree(f"solved node {node.key} has no solved reaction")
    memo[id(node)] = best
    return best


def extract_route(tree: SearchTree, validate: bool = True) -> Route:
    """Min-cost proof tree under the solved root; at each OR node the solved
    reaction child with the smallest subtree cost wins, ties to the lower
    template id."""
    if not tree.root.solved:
        raise InconsistentTree("root not solved")
    memo: dict[int, float] = {}

    def subtree_cost(node: MoleculeNode) -> float:
        return _min_subtree_cost(node, memo)

    def build(node: MoleculeNode) -> Route:
        smiles = write_smiles(node.graph)
        if node.in_stock:
            return Route(smiles, True)
        best_rnode = None
        best_cost = None
        for rnode in node.children:
            if not rnode.solved:
                continue
            c = rnode.cost + sum(subtree_cost(ch) for ch in rnode.children)
            if (
                best_cost is None
                or c < best_cost
                or (c == best_cost and rnode.template_id < best_rnode.template_id)
            ):
                best_rnode, best_cost = rnode, c
        if best_rnode is None:
            raise InconsistentTree(f"solved node {node.key} has no solved reaction")
        if validate and not validate_forward(
            best_rnode.template, [c.graph for c in best_rnode.children], node.graph
        ):
            raise InconsistentTree(
                f"reaction {best_rnode.template_id} fails forward validation"
            )
        return Route(
            smiles,
            False,
            RouteReaction(
                best_rnode.template_id,
                best_rnode.prob,
                best_rnode.cost,
                tuple(build(c) for c in best_rnode.children),
            ),
        )

    return build(tree.root)


# -- planner -----------------------------------------------------------------


@dataclass
class Failure:
    reason: str  # budget_iterations | budget_time | exhausted
    stats: dict = field(default_factory=dict)


def plan(
    target: MolecularGraph,
    stock: Stock,
    predictor: Predictor,
    heuristic: Optional[HeuristicProvider] = None,
    *,
    templates_db: Optional[dict[str, RetroTemplate]] = None,
    k: int = DEFAULT_K,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    max_seconds: float = DEFAULT_MAX_SECONDS,
    stop_policy: str = "first",
    context: str = "",
    validate: bool = True,
):
    """A* loop: select - expand - update until the root is solved, the
    frontier empties, or a budget trips. Returns Route or Failure."""
    if stop_policy not in ("first", "optimal"):
        raise InconsistentTree(f"unknown stop policy {stop_policy!r}")
    heuristic = heuristic or FixedLogitsHeuristic()
    tree = SearchTree(target, stock)
    stats: dict = {"iterations": 0}
    if tree.root.solved:
        stats["expansions"] = 0
        stats["predictor_calls"] = 0
        return Route(write_smiles(target), True)

    frontier = Frontier()
    heuristic_cache: dict[tuple[str, int], float] = {}

    def score_node(node: MoleculeNode) -> None:
        if node.in_stock:
            node.j_heuristic = 0.0
            return
        cache_key = (node.key, node.depth)
        if cache_key not in heuristic_cache:
            # one provider call per (molecule, depth); repeats hit the cache
            if node.parent is not None:
                probs = heuristic(
                    write_smiles(node.graph),
                    node.depth,
                    template=node.parent.template_id,
                    reactants=[write_smiles(c.graph) for c in node.parent.children],
                )
            else:
                probs = heuristic(write_smiles(node.graph), 0)
            heuristic_cache[cache_key] = heuristic_score(probs)
        node.j_heuristic = heuristic_cache[cache_key]

    score_node(tree.root)
    frontier.push(tree.root)
    best_route: Optional[Route] = None
    best_cost = math.inf
    start = time.monotonic()

    def finish_failure(reason: str):
        if best_route is not None:
            return best_route
        return Failure(reason, stats)

    while True:
        if time.monotonic() - start > max_seconds:
            return finish_failure("budget_time")
        if stats["iterations"] >= max_iterations:
            return finish_failure("budget_iterations")
        if stop_policy == "optimal" and best_route is not None:
            min_j = frontier.peek_j()
            if min_j is None or min_j >= best_cost:
                return best_route
        try:
            node = select_next(tree, frontier)
        except EmptyFrontier:
            if best_route is not None:
                return best_route
            return Failure("exhausted", stats)
        stats["iterations"] += 1
        new_reactions = expand(
            tree, node, predictor, templates_db, k=k, context=context, stats=stats
        )
        for rnode in new_reactions:
            for child in rnode.children:
                score_node(child)
                if not child.solved:
                    frontier.push(child)
        solved = update_solved(tree, new_reactions)
        if solved:
            if stop_policy == "first":
                return extract_route(tree, validate=validate)
            # cheap cost probe first; full (validated) extraction only on improvement
            cost = _min_subtree_cost(tree.root, {})
            if cost < best_cost:
                best_route = extract_route(tree, validate=validate)
                best_cost = best_route.total_cost
    # unreachable


def load_templates_db(path) -> dict[str, RetroTemplate]:
    from .templates import load_templates

    return {t.id: t for t in load_templates(path)}
