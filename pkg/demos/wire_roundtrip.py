"""Cross-language round trip: plan routes through the reference provider.

Spawns the TypeScript refpredictor over stdio, checks the handshake, then
plans every routed benchmark target twice: once with the in-process table
provider and once through the wire. The two route JSONs must be identical.
Requires a built provider (cd refpredictor && npm install && npm run
build). Run from the repo root:

    python3 demos/wire_roundtrip.py
"""

import sys
from pathlib import Path

from molforge._data import data_path
from molforge.chemio import parse_smiles
from molforge.evalharness import load_benchmark
from molforge.retro import (
    FixedLogitsHeuristic,
    Route,
    Stock,
    TableProposalProvider,
    load_templates_db,
    plan,
    route_to_json,
)
from molforge.wire import WireClient, WireHeuristic, WirePredictor

SERVER = Path(__file__).resolve().parents[1] / "refpredictor" / "dist" / "cli.js"


def main() -> int:
    if not SERVER.exists():
        print(f"provider not built: {SERVER}")
        print("build it with: cd refpredictor && npm install && npm run build")
        return 1

    stock = Stock.from_file(data_path("stock_desk.txt"))
    templates = load_templates_db(data_path("templates_desk.jsonl"))
    local = TableProposalProvider.from_file(data_path("predictor_desk.jsonl"))
    targets = [
        r.ref_smiles
        for r in load_benchmark(data_path("benchmark_desk.jsonl"))
        if r.ref_route and "reaction" in r.ref_route
    ]

    command = f"node {SERVER} serve --stdio --table {data_path('predictor_desk.jsonl')}"
    print(f"spawning: {command}")
    client = WireClient.spawn(command)
    try:
        # handshake: one expand and one heuristic against known answers
        probe = client.expand(targets[0], context="", k=3)
        print(f"expand({targets[0]!r}) -> {len(probe)} proposal(s), "
              f"top {probe[0]['template_id']} p={probe[0]['prob']}")
        probs = client.heuristic(targets[0], 0)
        print(f"heuristic -> {probs}")

        remote_predictor = WirePredictor(client, templates)
        remote_heuristic = WireHeuristic(client)
        agree = 0
        for smiles in targets:
            graph = parse_smiles(smiles)
            here = plan(graph, stock, local, FixedLogitsHeuristic(), templates_db=templates)
            there = plan(graph, stock, remote_predictor, remote_heuristic,
                         templates_db=templates)
            assert isinstance(here, Route) and isinstance(there, Route)
            if route_to_json(here) == route_to_json(there):
                agree += 1
            else:
                print(f"  MISMATCH for {smiles}")
        print(f"\nidentical routes: {agree}/{len(targets)}")
        return 0 if agree == len(targets) else 1
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
