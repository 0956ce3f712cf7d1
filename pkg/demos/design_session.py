"""One full multimodal session: text -> molecule -> synthesis route.

A scripted language model walks the token protocol (design trigger, eight
query tokens, molecule slot, retro trigger); the design module answers with
a diffusion sample and the retro module answers with a planned route. The
target comes from the bundled benchmark, and the denoiser is the planted
oracle, so the session is fully deterministic. Run from the repo root:

    python3 demos/design_session.py [--record 0]
"""

import argparse
import json

from molforge._data import data_path
from molforge.chemio import parse_smiles
from molforge.molgraph import canonical_key
from molforge.diffusion import (
    GraphTokenization,
    OracleDenoiser,
    build_transition,
    cosine_schedule,
    sample_graph,
    tokenize_graph,
)
from molforge.evalharness import load_benchmark
from molforge.orchestrator import (
    FingerprintEncoder,
    GenerationSession,
    ScriptedLM,
    run_session,
)
from molforge.retro import (
    FixedLogitsHeuristic,
    Stock,
    TableProposalProvider,
    load_templates_db,
)


def oracle_sampler(smiles: str):
    """Design module that always recovers `smiles` through the reverse walk."""
    target = parse_smiles(smiles)
    layout = GraphTokenization(N_G=max(8, len(target)))
    tokens = tokenize_graph(target, layout)
    schedule = cosine_schedule(50)
    nodes_q = build_transition(schedule, "uniform", layout.F_V)
    edges_q = build_transition(schedule, "uniform", layout.F_E)
    denoiser = OracleDenoiser(tokens)

    def sampler(condition):
        return sample_graph(
            condition, nodes_q, edges_q, denoiser,
            n_nodes=tokens.n_nodes, layout=layout, rng_seed=0,
        )

    return sampler


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--record", type=int, default=None,
                    help="benchmark record index (default: first routed record)")
    args = ap.parse_args()

    records = load_benchmark(data_path("benchmark_desk.jsonl"))
    index = args.record
    if index is None:
        index = next(i for i, r in enumerate(records) if r.ref_route)
    record = records[index]
    print(f"record     {index}")
    print(f"question   {record.question}")
    print(f"category   {record.category}")

    with open(data_path("lm_desk.json"), "r", encoding="utf-8") as fh:
        lm = ScriptedLM.from_json(json.load(fh))

    retro_kit = {
        "stock": Stock.from_file(data_path("stock_desk.txt")),
        "predictor": TableProposalProvider.from_file(data_path("predictor_desk.jsonl")),
        "heuristic": FixedLogitsHeuristic(),
        "templates_db": load_templates_db(data_path("templates_desk.jsonl")),
    }

    session = GenerationSession(question=record.question)
    run_session(
        session,
        lm,
        sampler=oracle_sampler(record.ref_smiles),
        encoder=FingerprintEncoder(dim=8),
        retro_kit=retro_kit,
    )

    # host-side condition slots parsed straight out of the question text
    print(f"conditions categorical={session.categorical} continuous={session.continuous}")

    print("\ntranscript")
    for element in session.transcript():
        payload = element["payload"]
        if isinstance(payload, dict):
            payload = json.dumps(payload)
        text = str(payload)
        if len(text) > 96:
            text = text[:93] + "..."
        print(f"  [{element['kind']:<8}] {text}")

    designed = session.designed_molecule
    match = designed is not None and canonical_key(designed) == canonical_key(
        parse_smiles(record.ref_smiles)
    )
    print(f"\ndesigned molecule matches reference: {match}")
    if session.route is not None:
        print(f"route solved with {session.route.steps} step(s), "
              f"cost {session.route.total_cost:.4f}")
    else:
        print("no validated route (failure element above carries the stats)")


if __name__ == "__main__":
    main()
