"""Plan synthesis routes against the bundled desk fixture world.

Loads the 200-molecule stock, the 40 exact-match templates and the frozen
proposal table, then runs the A* planner on a few targets: a one-step
product, a two-step product, and a molecule nothing in the table can make.
Run from the repo root:

    python3 demos/route_planning.py
"""

import json

from molforge._data import data_path
from molforge.chemio import parse_smiles
from molforge.evalharness import route_json_reactions
from molforge.retro import (
    Failure,
    FixedLogitsHeuristic,
    Route,
    Stock,
    TableProposalProvider,
    heuristic_score,
    load_templates_db,
    plan,
    route_to_json,
)


def describe(route: Route, indent: str = "  ") -> None:
    doc = route_to_json(route)
    if doc.get("in_stock") and "reaction" not in doc:
        print(f"{indent}{doc['target']} is in stock, nothing to do")
        return
    print(f"{indent}steps      {route.steps}")
    print(f"{indent}total cost {route.total_cost:.4f}")
    for rxn in route_json_reactions(doc):
        print(f"{indent}  {rxn['template_id']}: {rxn['product']} <- {' + '.join(rxn['reactants'])}")


def main() -> None:
    stock = Stock.from_file(data_path("stock_desk.txt"))
    templates = load_templates_db(data_path("templates_desk.jsonl"))
    predictor = TableProposalProvider.from_file(data_path("predictor_desk.jsonl"))
    heuristic = FixedLogitsHeuristic()
    print(f"stock {len(stock)} molecules, {len(templates)} templates")

    # the heuristic cost scale: expected score under the 5-way choice
    print("\nchoice scores spread synthesizability from 0 (buy it) to 7 (hard):")
    print(f"  uniform logits -> J = {heuristic_score(heuristic('X', 0)):.2f}")

    # pick routed targets out of the bundled benchmark: first one-step,
    # first two-step
    one_step = two_step = None
    with open(data_path("benchmark_desk.jsonl"), "r", encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            route = doc.get("ref_route")
            if not route:
                continue
            n = len(route_json_reactions(route))
            if n == 1 and one_step is None:
                one_step = doc["ref_smiles"]
            if n == 2 and two_step is None:
                two_step = doc["ref_smiles"]
            if one_step and two_step:
                break

    for label, smiles in (("one-step target", one_step), ("two-step target", two_step)):
        print(f"\n{label}: {smiles}")
        result = plan(
            parse_smiles(smiles), stock, predictor, heuristic,
            templates_db=templates, stop_policy="optimal",
        )
        assert isinstance(result, Route)
        describe(result)

    # a molecule the table has never seen: the planner exhausts the frontier
    # and reports a structured failure instead of raising
    print("\nunroutable target: CC(C)(C)C(C)(C)C")
    result = plan(parse_smiles("CC(C)(C)C(C)(C)C"), stock, predictor, heuristic,
                  templates_db=templates)
    assert isinstance(result, Failure)
    print(f"  failure reason {result.reason}")
    print(f"  iterations     {result.stats.get('iterations')}")

    # something already purchasable costs nothing
    with open(data_path("stock_desk.txt"), "r", encoding="utf-8") as fh:
        purchasable = fh.readline().strip()
    result = plan(parse_smiles(purchasable), stock, predictor, heuristic)
    assert isinstance(result, Route) and result.total_cost == 0.0
    print(f"\nstock molecule {purchasable}: cost {result.total_cost}, {result.steps} steps")


if __name__ == "__main__":
    main()
