#!/usr/bin/env python3
"""Regenerate the frozen fixture files under src/molforge/data/.

Every choice is driven by one fixed seed, so reruns are byte-identical.
The desk-scale benchmark world is built from linear hetero chains: each
routed target is a concatenation of purchasable fragments, and each route
step gets its own exact (element- and degree-pinned) template, so forward
validation is guaranteed by construction. The script re-plans every route
against the frozen files and refuses to write inconsistent fixtures.

Run from the repository root:  python3 tools/make_fixtures.py
"""

import json
import os
import random
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from molforge.chemio import parse_smiles, write_smiles
from molforge.evalharness import EchoSystem, TableOracle, load_benchmark, run_benchmark
from molforge.molgraph import Atom, MolecularGraph, canonical_key, check_valence
from molforge.retro import (
    FixedLogitsHeuristic,
    Route,
    Stock,
    TableProposalProvider,
    load_templates_db,
    plan,
    route_to_json,
)

SEED = 20250825
DATA = os.path.join(os.path.dirname(__file__), "..", "src", "molforge", "data")

VAL = {"C": 4, "N": 3, "O": 2, "S": 2, "P": 3, "F": 1, "Cl": 1, "Br": 1, "I": 1}


def canon(smiles: str) -> str:
    return write_smiles(parse_smiles(smiles))


# -- parser corpus ----------------------------------------------------------

HAND_WRITTEN = [
    # noncanonical spellings and brackets
    "OCC", "N(C)C", "[CH4]", "[NH4+]", "[OH-]", "C[NH3+]",
    "CC(=O)[O-]", "C[N+](C)(C)C", "[O-]C(=O)CC(=O)[O-]",
    # multiple bonds and branches
    "C=C", "C#N", "CC(C)(C)C", "O=C=O", "N#CC#N", "CC(=O)OC(C)=O",
    "ClC(Cl)(Cl)Cl", "FC(F)(F)S(=O)(=O)O", "OP(=O)(O)O", "CSC", "S=C=S",
    # rings
    "C1CC1", "C1CCCCC1", "O1CCOCC1", "C1CCNCC1", "C1CC2CCC1CC2",
    # aromatics
    "c1ccccc1", "c1ccncc1", "c1cc[nH]c1", "c1ccoc1", "c1ccsc1",
    "Cc1ccccc1", "OCc1ccncc1", "c1ccc2ccccc2c1", "Nc1ccc(O)cc1",
    # attachment-point molecules
    "*CC*", "*OCCO*", "*C(=O)CCC(=O)*",
]

ELEMENT_POOL = ["C"] * 10 + ["N"] * 3 + ["O"] * 3 + ["S", "P", "F", "Cl", "Br", "I"]

AROMATIC_RINGS = [
    ("C", "C", "C", "C", "C", "C"),  # benzene
    ("C", "C", "N", "C", "C", "C"),  # pyridine
    ("C", "C", "C", "C", "N"),  # pyrrole (N-H)
    ("C", "C", "C", "C", "O"),  # furan
    ("C", "C", "C", "C", "S"),  # thiophene
]


def random_plain_graph(rng: random.Random):
    n = rng.randint(1, 13)
    els = [rng.choice(ELEMENT_POOL) for _ in range(n)]
    residual = [VAL[e] for e in els]
    bonds = []
    adjacent = set()
    for i in range(1, n):
        parents = [j for j in range(i) if residual[j] >= 1]
        if not parents:
            return None
        p = rng.choice(parents)
        cap = min(residual[p], VAL[els[i]], 3)
        order = 1 if cap == 1 or rng.random() < 0.75 else rng.randint(2, cap)
        bonds.append((p, i, float(order)))
        adjacent.add((p, i))
        residual[p] -= order
        residual[i] -= order
    if n >= 4 and rng.random() < 0.35:
        open_atoms = [i for i in range(n) if residual[i] >= 1]
        rng.shuffle(open_atoms)
        for a in open_atoms:
            partners = [
                b for b in open_atoms
                if b > a and (a, b) not in adjacent and (b, a) not in adjacent
            ]
            if partners:
                b = rng.choice(partners)
                bonds.append((a, b, 1.0))
                residual[a] -= 1
                residual[b] -= 1
                break
    atoms = [Atom(e, 0, False, residual[i]) for i, e in enumerate(els)]
    return MolecularGraph(atoms, bonds)


def random_aromatic_graph(rng: random.Random):
    ring = rng.choice(AROMATIC_RINGS)
    size = len(ring)
    atoms = []
    bonds = []
    for i, el in enumerate(ring):
        atoms.append([el, True, 0])
        bonds.append((i, (i + 1) % size, 1.5))
    # one optional substituent chain on a ring carbon
    sub_len = rng.randint(0, 3)
    sub_at = None
    if sub_len:
        carbons = [i for i, el in enumerate(ring) if el == "C"]
        sub_at = rng.choice(carbons)
        prev = sub_at
        for _ in range(sub_len):
            el = rng.choice(["C", "C", "C", "N", "O"])
            atoms.append([el, False, 0])
            idx = len(atoms) - 1
            bonds.append((prev, idx, 1.0))
            prev = idx
    final = []
    for i, (el, aromatic, _) in enumerate(atoms):
        orders = [o for (a, b, o) in bonds if i in (a, b)]
        if aromatic:
            if el == "N" and size == 5:
                h = 1  # pyrrole-type nitrogen keeps its hydrogen
            elif el == "C":
                h = 0 if i == sub_at else 1
            else:
                h = 0
        else:
            h = VAL[el] - int(sum(orders))
        final.append(Atom(el, 0, aromatic, h))
    return MolecularGraph(final, bonds)


def round_trips(smiles: str) -> bool:
    try:
        g1 = parse_smiles(smiles)
        g2 = parse_smiles(write_smiles(g1))
    except Exception:
        return False
    return canonical_key(g1) == canonical_key(g2)


def build_corpus(rng: random.Random, size: int = 1000) -> list[str]:
    out = []
    seen = set()
    for s in HAND_WRITTEN:
        if not round_trips(s):
            raise SystemExit(f"hand-written corpus entry fails round trip: {s}")
        key = canonical_key(parse_smiles(s))
        if key in seen:
            raise SystemExit(f"duplicate hand-written corpus entry: {s}")
        seen.add(key)
        out.append(s)
    while len(out) < size:
        g = (
            random_aromatic_graph(rng)
            if rng.random() < 0.25
            else random_plain_graph(rng)
        )
        if g is None or not check_valence(g).valid:
            continue
        try:
            s = write_smiles(g)
        except Exception:
            continue
        if not round_trips(s):
            continue
        key = canonical_key(parse_smiles(s))
        if key in seen:
            continue
        seen.add(key)
        out.append(s)
    return out


# -- desk benchmark world ----------------------------------------------------

CHAIN_POOL = ("C", "C", "C", "C", "N", "O", "S")

Seq = tuple  # element sequence of a path molecule, in path order


def random_seq(rng: random.Random, lo: int, hi: int) -> Seq:
    while True:
        els = tuple(rng.choice(CHAIN_POOL) for _ in range(rng.randint(lo, hi)))
        if all(
            not (els[i] in "OS" and els[i + 1] in "OS") for i in range(len(els) - 1)
        ):
            return els


def joinable(a: Seq, b: Seq) -> bool:
    return not (a[-1] in "OS" and b[0] in "OS")


def full_pattern(seq: Seq) -> str:
    """Exact template pattern for a path molecule: every atom element- and
    degree-pinned, in path order, so it matches that one molecule only.
    Built from the element sequence because the canonical spelling may root
    the path at an interior atom."""
    n = len(seq)
    parts = []
    for i, el in enumerate(seq):
        d = 0 if n == 1 else (1 if i in (0, n - 1) else 2)
        parts.append(f"[{el};D{d}]")
    return "".join(parts)


class World:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()
        self.templates: list[dict] = []
        self.table: dict[str, list[dict]] = {}

    def claim(self, smiles: str) -> str:
        c = canon(smiles)
        key = canonical_key(parse_smiles(c))
        if key in self.used:
            return ""
        self.used.add(key)
        return c

    def claim_seq(self, seq: Seq) -> str:
        return self.claim("".join(seq))

    def fresh_chain(self, lo: int, hi: int) -> tuple[Seq, str]:
        while True:
            seq = random_seq(self.rng, lo, hi)
            c = self.claim_seq(seq)
            if c:
                return seq, c

    def add_step(self, product_seq: Seq, product: str, reactants: list[str]) -> str:
        tid = f"tmpl_{len(self.templates) + 1:03d}"
        prob = round(self.rng.uniform(0.55, 0.95), 4)
        self.templates.append(
            {
                "id": tid,
                "product": full_pattern(product_seq),
                "reactants": reactants,
                "prior": prob,
            }
        )
        self.table[product] = [{"template_id": tid, "prob": prob}]
        return tid

    def add_decoys(self) -> None:
        # low-probability proposals whose exact-match templates cannot fire
        # on this product; they exercise the planner's skip path
        ids = [t["id"] for t in self.templates]
        for product, proposals in self.table.items():
            if self.rng.random() < 0.4:
                own = proposals[0]["template_id"]
                decoy = self.rng.choice([i for i in ids if i != own])
                proposals.append(
                    {
                        "template_id": decoy,
                        "prob": round(proposals[0]["prob"] * self.rng.uniform(0.3, 0.8), 4),
                    }
                )


DRUG_TOPICS = [
    "a solvent additive", "a flavor carrier", "a chelating probe",
    "a plasticizer fragment", "a fuel stabilizer", "a lubricant base",
    "a fragrance fixative", "an extraction agent",
]

MATERIAL_TOPICS = [
    "a flexible film", "a gas-separation membrane",
    "an adhesive backbone", "a coating resin",
]


def build_world(rng: random.Random):
    world = World(rng)
    fragments = [world.fresh_chain(2, 5) for _ in range(70)]

    def next_pair():
        while True:
            (sa, a), (sb, b) = rng.sample(fragments, 2)
            if joinable(sa, sb):
                return (sa, a), (sb, b)

    stock_needed: set[str] = set()
    routed: list[dict] = []

    # 24 one-step targets: ref = A ++ B
    while sum(1 for r in routed if r["steps"] == 1) < 24:
        (sa, a), (sb, b) = next_pair()
        if len(sa) + len(sb) > 10:
            continue
        seq = sa + sb
        ref = world.claim_seq(seq)
        if not ref:
            continue
        world.add_step(seq, ref, [a, b])
        stock_needed.update((a, b))
        routed.append({"ref": ref, "steps": 1})

    # 8 two-step targets: ref = (A ++ B) ++ C with a non-stock intermediate
    while sum(1 for r in routed if r["steps"] == 2) < 8:
        (sa, a), (sb, b) = next_pair()
        if len(sa) + len(sb) > 8:
            continue
        mid_seq = sa + sb
        mid = world.claim_seq(mid_seq)
        if not mid:
            continue
        sc, c = rng.choice([f for f in fragments if joinable(mid_seq, f[0])])
        seq = mid_seq + sc
        ref = world.claim_seq(seq)
        if not ref:
            continue
        world.add_step(seq, ref, [mid, c])
        world.add_step(mid_seq, mid, [a, b])
        stock_needed.update((a, b, c))
        routed.append({"ref": ref, "steps": 2})

    world.add_decoys()

    unrouted = [world.fresh_chain(5, 9)[1] for _ in range(14)]
    materials = []
    for _ in range(4):
        while True:
            m = world.claim("*" + "".join(random_seq(rng, 3, 6)) + "*")
            if m:
                materials.append(m)
                break

    stock = sorted(stock_needed)
    while len(stock) < 200:
        stock.append(world.fresh_chain(2, 5)[1])
    stock = sorted(stock[:200])
    return world, routed, unrouted, materials, stock


def build_records(rng, routed, unrouted, materials):
    records = []
    for i, item in enumerate(routed):
        logp = round(rng.uniform(-1.0, 4.0), 2)
        active = rng.randint(0, 1)
        topic = DRUG_TOPICS[i % len(DRUG_TOPICS)]
        steps = item["steps"]
        records.append(
            {
                "question": (
                    f"Design {topic}: a small chain molecule with"
                    f" logP: {logp} and active: {'yes' if active else 'no'}."
                    " Suggest how to make it."
                ),
                "properties": {
                    "logP": {"value": logp, "kind": "continuous"},
                    "active": {"value": active, "kind": "categorical"},
                },
                "ref_smiles": item["ref"],
                "category": "drug",
                "ref_text": (
                    f"{item['ref']} fits the request and can be assembled in"
                    f" {steps} step{'s' if steps > 1 else ''} from purchasable"
                    " fragments."
                ),
                "_route_target": item["ref"],
                "_steps": steps,
            }
        )
    for i, ref in enumerate(unrouted):
        logp = round(rng.uniform(-1.0, 4.0), 2)
        active = rng.randint(0, 1)
        topic = DRUG_TOPICS[(i + 3) % len(DRUG_TOPICS)]
        records.append(
            {
                "question": (
                    f"Design {topic}: a small chain molecule with"
                    f" logP: {logp} and active: {'yes' if active else 'no'}."
                ),
                "properties": {
                    "logP": {"value": logp, "kind": "continuous"},
                    "active": {"value": active, "kind": "categorical"},
                },
                "ref_smiles": ref,
                "category": "drug",
                "ref_text": f"{ref} fits the request; no synthesis route was validated.",
                "ref_route": None,
            }
        )
    for i, ref in enumerate(materials):
        density = round(rng.uniform(0.9, 1.8), 2)
        flexible = i % 2
        records.append(
            {
                "question": (
                    f"Design {MATERIAL_TOPICS[i % len(MATERIAL_TOPICS)]}: a polymer"
                    f" repeat unit with density: {density} and"
                    f" flexible: {'yes' if flexible else 'no'}."
                ),
                "properties": {
                    "density": {"value": density, "kind": "continuous"},
                    "flexible": {"value": flexible, "kind": "categorical"},
                },
                "ref_smiles": ref,
                "category": "material",
                "ref_text": f"The repeat unit {ref} carries two attachment points.",
                "ref_route": None,
            }
        )
    rng.shuffle(records)
    return records


def build_oracle(rng, records):
    rows = []
    for rec in records:
        measured = {}
        for name, spec in rec["properties"].items():
            if spec["kind"] == "continuous":
                measured[name] = round(spec["value"] + rng.uniform(-0.6, 0.6), 3)
            else:
                flip = rng.random() < 0.25
                measured[name] = int(spec["value"]) ^ int(flip)
        rows.append(
            {
                "canonical_key": canonical_key(parse_smiles(rec["ref_smiles"])),
                "properties": measured,
            }
        )
    return rows


LM_DESK = {
    "tokens": [
        "here", "is", "a", "candidate", "<design_start>",
        "and", "a", "synthesis", "plan", "<retro_start>", "done",
    ],
    "hidden": {
        "5": [0.4, -0.2, 0.1, 0.0, 0.3, -0.1, 0.2, 0.05],
        "8": [-0.3, 0.6, 0.0, 0.2, -0.4, 0.1, 0.0, 0.25],
    },
    "dim": 8,
}


def main() -> int:
    rng = random.Random(SEED)
    os.makedirs(DATA, exist_ok=True)

    corpus = build_corpus(rng)
    with open(os.path.join(DATA, "smiles_corpus.txt"), "w") as fh:
        fh.write("\n".join(corpus) + "\n")
    print(f"corpus: {len(corpus)} molecules")

    world, routed, unrouted, materials, stock = build_world(rng)
    with open(os.path.join(DATA, "stock_desk.txt"), "w") as fh:
        fh.write("\n".join(stock) + "\n")
    with open(os.path.join(DATA, "templates_desk.jsonl"), "w") as fh:
        for t in world.templates:
            fh.write(json.dumps(t) + "\n")
    with open(os.path.join(DATA, "predictor_desk.jsonl"), "w") as fh:
        for product in sorted(world.table):
            fh.write(
                json.dumps({"product": product, "proposals": world.table[product]})
                + "\n"
            )
    print(
        f"world: {len(stock)} stock, {len(world.templates)} templates,"
        f" {len(world.table)} table products"
    )

    records = build_records(rng, routed, unrouted, materials)

    # re-plan each routed target against the frozen files and freeze the result
    stock_db = Stock.from_file(os.path.join(DATA, "stock_desk.txt"))
    templates_db = load_templates_db(os.path.join(DATA, "templates_desk.jsonl"))
    provider = TableProposalProvider.from_file(os.path.join(DATA, "predictor_desk.jsonl"))
    for rec in records:
        target = rec.pop("_route_target", None)
        steps = rec.pop("_steps", None)
        if target is None:
            continue
        result = plan(
            parse_smiles(target), stock_db, provider, FixedLogitsHeuristic(),
            templates_db=templates_db,
        )
        if not isinstance(result, Route) or result.steps != steps:
            raise SystemExit(f"route for {target} did not re-plan to {steps} steps")
        rec["ref_route"] = route_to_json(result)
    with open(os.path.join(DATA, "benchmark_desk.jsonl"), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")

    oracle_rows = build_oracle(rng, records)
    with open(os.path.join(DATA, "oracle_desk.jsonl"), "w") as fh:
        for row in oracle_rows:
            fh.write(json.dumps(row) + "\n")

    with open(os.path.join(DATA, "lm_desk.json"), "w") as fh:
        json.dump(LM_DESK, fh, indent=2)
        fh.write("\n")

    # consistency gate: the echo baseline must score perfectly on its own refs
    loaded = load_benchmark(os.path.join(DATA, "benchmark_desk.jsonl"))
    oracle = TableOracle.from_file(os.path.join(DATA, "oracle_desk.jsonl"))
    report = run_benchmark(loaded, EchoSystem(), oracle=oracle, stock=stock_db)
    routed_n = sum(1 for r in records if r.get("ref_route"))
    assert report.validity == 1.0, report.validity
    assert report.similarity == 1.0, report.similarity
    assert report.bleu4 == 1.0, report.bleu4
    assert report.retro_success == routed_n / len(records), report.retro_success
    assert report.coverage["missing"] == 0, report.coverage
    print(
        f"benchmark: {len(records)} records ({routed_n} routed),"
        f" echo validity {report.validity}, bleu {report.bleu4},"
        f" retro {report.retro_success}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
