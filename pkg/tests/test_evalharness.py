"""Metric tests with independent counting oracles, plus benchmark-runner
behavior: echo baseline identities, per-record fault isolation, coverage
reporting, and order invariance."""

import json
import math
import random
from collections import Counter

import pytest

from molforge.chemio import parse_smiles
from molforge.errors import EmptyList, ParseError, UndefinedMetric
from molforge.evalharness import (
    BenchmarkRecord,
    EchoSystem,
    MetricReport,
    TableOracle,
    balanced_accuracy,
    bleu4,
    designed_molecule,
    load_benchmark,
    mae,
    record_from_json,
    rouge_l,
    route_json_reactions,
    route_success,
    run_benchmark,
    similarity,
    transcript_text,
    validity,
)
from molforge.molgraph import canonical_key
from molforge.retro import Stock


# -- independent oracles ---------------------------------------------------


def oracle_bleu(candidate: str, reference: str) -> float:
    """Separate implementation: explicit loops, no shared helpers."""
    import re

    c = re.findall(r"\w+", candidate.lower())
    r = re.findall(r"\w+", reference.lower())
    if not c or not r:
        return 0.0
    product = 1.0
    for n in (1, 2, 3, 4):
        c_grams = [tuple(c[i : i + n]) for i in range(len(c) - n + 1)]
        r_grams = [tuple(r[i : i + n]) for i in range(len(r) - n + 1)]
        r_count = Counter(r_grams)
        clipped = 0
        for gram, cnt in Counter(c_grams).items():
            clipped += min(cnt, r_count.get(gram, 0))
        total = len(c_grams)
        if clipped == 0:
            p = (clipped + 1) / (total + 1)
        else:
            p = clipped / total
        product *= p
    bleu = product ** 0.25
    if len(c) < len(r):
        bleu *= math.exp(1 - len(r) / len(c))
    return bleu


def oracle_lcs(a: list, b: list) -> int:
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


class TestBleu:
    def test_identical_texts_exactly_one(self):
        for text in ("a b", "the cat sat on the mat", "one"):
            assert bleu4(text, text) == pytest.approx(1.0, abs=1e-12)

    def test_empty_either_side_is_zero(self):
        assert bleu4("", "ref text") == 0.0
        assert bleu4("cand text", "") == 0.0
        assert bleu4("...", "ref") == 0.0  # punctuation-only tokenizes empty

    def test_disjoint_long_texts_below_smoothing_floor(self):
        cand = " ".join(f"w{i}" for i in range(60))
        ref = " ".join(f"v{i}" for i in range(60))
        score = bleu4(cand, ref)
        assert 0.0 < score < 0.02

    def test_hand_case_matches_independent_oracle(self):
        cand = "the cat sat on the mat by the door"
        ref = "the cat is on the mat near the door"
        assert bleu4(cand, ref) == pytest.approx(oracle_bleu(cand, ref), abs=1e-9)

    def test_random_texts_match_oracle_and_stay_bounded(self):
        rng = random.Random(4)
        vocab = ["mol", "ring", "acid", "chain", "bond", "atom", "group"]
        for _ in range(200):
            cand = " ".join(rng.choices(vocab, k=rng.randint(1, 20)))
            ref = " ".join(rng.choices(vocab, k=rng.randint(1, 20)))
            got = bleu4(cand, ref)
            assert got == pytest.approx(oracle_bleu(cand, ref), abs=1e-9)
            assert 0.0 <= got <= 1.0

    def test_brevity_penalty_applies_only_when_shorter(self):
        # candidate is a strict prefix: precisions 1, penalty drives the score
        assert bleu4("a b c", "a b c d e f") == pytest.approx(math.exp(1 - 2))
        assert bleu4("a b c d e f", "a b c") < 1.0  # extra tokens hurt precision


class TestRouge:
    def test_identical_is_one(self):
        assert rouge_l("alpha beta gamma", "alpha beta gamma") == pytest.approx(1.0)

    def test_disjoint_is_zero(self):
        assert rouge_l("a b c", "x y z") == 0.0

    def test_empty_is_zero(self):
        assert rouge_l("", "a") == 0.0
        assert rouge_l("a", "") == 0.0

    def test_reversed_four_tokens(self):
        # LCS("a b c d", "d c b a") = 1 -> P = R = 1/4 -> F1 = 1/4
        assert rouge_l("a b c d", "d c b a") == pytest.approx(0.25)

    def test_random_against_dp_oracle(self):
        rng = random.Random(9)
        vocab = list("abcdefg")
        for _ in range(300):
            a = [rng.choice(vocab) for _ in range(rng.randint(1, 15))]
            b = [rng.choice(vocab) for _ in range(rng.randint(1, 15))]
            lcs = oracle_lcs(a, b)
            expected = 0.0
            if lcs:
                p, r = lcs / len(a), lcs / len(b)
                expected = 2 * p * r / (p + r)
            assert rouge_l(" ".join(a), " ".join(b)) == pytest.approx(expected, abs=1e-12)


class TestBalancedAccuracy:
    def test_perfect_is_one(self):
        assert balanced_accuracy([(1, 1), (0, 0), (1, 1)]) == 1.0

    def test_all_positive_on_balanced_is_half(self):
        pairs = [(1, 1), (1, 1), (0, 1), (0, 1)]
        assert balanced_accuracy(pairs) == pytest.approx(0.5)

    def test_inverted_is_zero(self):
        assert balanced_accuracy([(1, 0), (0, 1)]) == 0.0

    def test_absent_class_undefined(self):
        with pytest.raises(UndefinedMetric):
            balanced_accuracy([(1, 1), (1, 0)])
        with pytest.raises(UndefinedMetric):
            balanced_accuracy([(0, 0)])

    def test_nonbinary_rejected(self):
        with pytest.raises(UndefinedMetric):
            balanced_accuracy([(2, 1), (0, 0)])

    def test_duplication_invariance(self):
        pairs = [(1, 1), (1, 0), (0, 0), (0, 1), (1, 1)]
        base = balanced_accuracy(pairs)
        assert balanced_accuracy(pairs * 7) == pytest.approx(base, abs=1e-12)

    def test_formula_on_constructed_confusion_matrix(self):
        # TP=3 FN=1, TN=2 FP=2: (0.75 + 0.5) / 2
        pairs = [(1, 1)] * 3 + [(1, 0)] + [(0, 0)] * 2 + [(0, 1)] * 2
        assert balanced_accuracy(pairs) == pytest.approx(0.625)


class TestMae:
    def test_equal_is_zero(self):
        assert mae([(1.0, 1.0), (2.5, 2.5)]) == 0.0

    def test_hand_case(self):
        assert mae([(0, 1), (2, 2)]) == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(EmptyList):
            mae([])

    def test_random_against_summation_oracle(self):
        rng = random.Random(12)
        pairs = [(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(100)]
        total = 0.0
        for t, p in pairs:
            total += abs(t - p)
        assert mae(pairs) == pytest.approx(total / 100, abs=1e-12)
        assert mae(pairs) >= 0.0


class TestValidity:
    def test_drug_valid_molecule(self):
        assert validity(parse_smiles("CCO"), "drug")

    def test_material_needs_two_stars(self):
        assert validity(parse_smiles("*CC*"), "material")
        assert not validity(parse_smiles("*CC"), "material")
        assert not validity(parse_smiles("CC"), "material")

    def test_star_molecule_fine_for_drug(self):
        assert validity(parse_smiles("*CC"), "drug")

    def test_parse_failure_is_invalid(self):
        assert not validity(None, "drug")
        assert not validity("CCO", "drug")  # raw text is not a graph


# -- records and loading ---------------------------------------------------


def make_record(**kw) -> BenchmarkRecord:
    base = dict(
        question="design something with logP: 1.0",
        properties={"logP": (1.0, "continuous")},
        ref_smiles="CCO",
        ref_route=None,
        category="drug",
        ref_text="an ethanol-like molecule",
    )
    base.update(kw)
    return BenchmarkRecord(**base)


class TestRecords:
    def test_bad_category_rejected(self):
        with pytest.raises(ParseError):
            make_record(category="protein")

    def test_bad_categorical_value_rejected(self):
        with pytest.raises(ParseError):
            make_record(properties={"HIV": (2, "categorical")})

    def test_bad_kind_rejected(self):
        with pytest.raises(ParseError):
            make_record(properties={"x": (1.0, "ordinal")})

    def test_json_round_trip(self):
        doc = {
            "question": "q logP: 2.0",
            "properties": {"logP": {"value": 2.0, "kind": "continuous"}},
            "ref_smiles": "CCO",
            "ref_route": None,
            "category": "drug",
            "ref_text": "text",
        }
        rec = record_from_json(doc)
        assert rec.properties == {"logP": (2.0, "continuous")}

    def test_loader_cites_line_numbers(self, tmp_path):
        p = tmp_path / "bench.jsonl"
        good = json.dumps(
            {"question": "q", "properties": {}, "ref_smiles": "C", "category": "drug"}
        )
        p.write_text(good + "\n" + "{not json}\n")
        with pytest.raises(ParseError, match="line 2"):
            load_benchmark(p)

    def test_loader_skips_blank_lines(self, tmp_path):
        p = tmp_path / "bench.jsonl"
        good = json.dumps(
            {"question": "q", "properties": {}, "ref_smiles": "C", "category": "drug"}
        )
        p.write_text("\n" + good + "\n\n")
        assert len(load_benchmark(p)) == 1


class TestTranscriptDigestion:
    def test_last_molecule_wins(self):
        transcript = [
            {"kind": "molecule", "payload": {"smiles": "CC"}},
            {"kind": "text", "payload": "then"},
            {"kind": "molecule", "payload": {"smiles": "CCO"}},
        ]
        g = designed_molecule(transcript)
        assert canonical_key(g) == canonical_key(parse_smiles("CCO"))

    def test_no_molecule_is_none(self):
        assert designed_molecule([{"kind": "text", "payload": "hi"}]) is None

    def test_unparseable_molecule_is_none(self):
        assert designed_molecule([{"kind": "molecule", "payload": {"smiles": "??"}}]) is None

    def test_text_concatenation(self):
        transcript = [
            {"kind": "text", "payload": "first bit"},
            {"kind": "molecule", "payload": {"smiles": "C"}},
            {"kind": "text", "payload": "second bit"},
        ]
        assert transcript_text(transcript) == "first bit second bit"

    def test_route_success_needs_stocked_leaves(self):
        stock = Stock.from_smiles(["CC", "O"])
        transcript = [
            {
                "kind": "reaction",
                "payload": {"product": "CCO", "reactants": ["CC", "O"]},
            }
        ]
        assert route_success(transcript, stock, None)
        assert not route_success(transcript, Stock.from_smiles(["CC"]), None)

    def test_route_success_multi_step_interior_products_ok(self):
        stock = Stock.from_smiles(["C"])
        transcript = [
            {"kind": "reaction", "payload": {"product": "CCO", "reactants": ["CC"]}},
            {"kind": "reaction", "payload": {"product": "CC", "reactants": ["C"]}},
        ]
        assert route_success(transcript, stock, None)

    def test_failure_element_blocks_success(self):
        stock = Stock.from_smiles(["CC"])
        transcript = [
            {"kind": "failure", "payload": {"reason": "exhausted"}},
            {"kind": "reaction", "payload": {"product": "CCO", "reactants": ["CC"]}},
        ]
        assert not route_success(transcript, stock, None)

    def test_zero_reactions_success_only_if_designed_in_stock(self):
        stock = Stock.from_smiles(["CCO"])
        assert route_success([], stock, parse_smiles("OCC"))
        assert not route_success([], stock, parse_smiles("CC"))
        assert not route_success([], stock, None)

    def test_route_json_flattening(self):
        doc = {
            "smiles": "CCO",
            "in_stock": False,
            "reaction": {
                "template_id": "t1",
                "prob": 0.5,
                "cost": 0.69,
                "reactants": [
                    {
                        "smiles": "CC",
                        "in_stock": False,
                        "reaction": {
                            "template_id": "t2",
                            "prob": 0.4,
                            "cost": 0.91,
                            "reactants": [{"smiles": "C", "in_stock": True}],
                        },
                    }
                ],
            },
        }
        flat = route_json_reactions(doc)
        assert [r["product"] for r in flat] == ["CCO", "CC"]
        assert route_json_reactions({"target": "C", "in_stock": True}) == []


# -- run_benchmark -----------------------------------------------------------


def echo_records():
    route = {
        "smiles": "CCO",
        "in_stock": False,
        "reaction": {
            "template_id": "t",
            "prob": 0.5,
            "cost": 0.69,
            "reactants": [{"smiles": "CC", "in_stock": True}],
        },
    }
    return [
        make_record(ref_smiles="CCO", ref_route=route, ref_text="make ethanol now"),
        make_record(ref_smiles="c1ccccc1", ref_route=None, ref_text="benzene ring here"),
        make_record(
            ref_smiles="*CC*", category="material", ref_route=None,
            ref_text="a repeat unit", properties={},
        ),
        make_record(ref_smiles="CC(=O)O", ref_route=None, ref_text="acetic acid"),
    ]


class TestRunBenchmark:
    def test_echo_system_identities(self):
        records = echo_records()
        stock = Stock.from_smiles(["CC"])
        report = run_benchmark(records, EchoSystem(), stock=stock)
        assert report.validity == 1.0
        assert report.similarity == 1.0
        assert report.bleu4 == pytest.approx(1.0, abs=1e-12)
        assert report.rouge_l == pytest.approx(1.0, abs=1e-12)
        # exactly one record has a non-null, stock-valid ref_route
        assert report.retro_success == pytest.approx(1 / 4)
        assert report.counts["records"] == 4

    def test_empty_molecule_counts_invalid_similarity_zero(self):
        def no_molecule(record):
            return [{"kind": "text", "payload": "no molecule sorry"}]

        report = run_benchmark(echo_records(), no_molecule)
        assert report.validity == 0.0
        assert report.similarity == 0.0

    def test_per_record_error_isolated(self):
        records = echo_records()

        def flaky(record):
            if record.ref_smiles == "c1ccccc1":
                raise RuntimeError("boom")
            return EchoSystem()(record)

        report = run_benchmark(records, flaky)
        assert report.counts["system_errors"] == 1
        assert report.validity == pytest.approx(3 / 4)
        assert any("boom" in e for e in report.errors)

    def test_order_invariance(self):
        records = echo_records()
        stock = Stock.from_smiles(["CC"])
        a = run_benchmark(records, EchoSystem(), stock=stock)
        shuffled = [records[2], records[0], records[3], records[1]]
        b = run_benchmark(shuffled, EchoSystem(), stock=stock)
        for attr in ("validity", "similarity", "bleu4", "rouge_l", "retro_success"):
            assert getattr(a, attr) == pytest.approx(getattr(b, attr), abs=1e-12)

    def test_determinism(self):
        records = echo_records()
        a = run_benchmark(records, EchoSystem()).to_json()
        b = run_benchmark(records, EchoSystem()).to_json()
        assert a == b

    def test_property_grouping_against_hand_computation(self):
        key_ccn = canonical_key(parse_smiles("CCN"))
        oracle = TableOracle({key_ccn: {"soluble": 1, "logP": 0.9}})
        records = [
            make_record(
                properties={"soluble": (1, "categorical"), "logP": (1.5, "continuous")},
                ref_smiles="CCO",
            ),
            make_record(
                properties={"soluble": (0, "categorical")},
                ref_smiles="CCO",
            ),
        ]

        def always_ccn(record):
            return [{"kind": "molecule", "payload": {"smiles": "CCN"}}]

        report = run_benchmark(records, always_ccn, oracle=oracle)
        # pairs: (1,1) and (0,1) -> TPR 1, TNR 0 -> 0.5
        assert report.balanced_accuracy == {"soluble": 0.5}
        assert report.mae == {"logP": pytest.approx(0.6)}

    def test_missing_oracle_molecule_excluded_with_coverage(self):
        oracle = TableOracle({})  # knows nothing
        records = [make_record()]
        report = run_benchmark(records, EchoSystem(), oracle=oracle)
        assert report.balanced_accuracy == {} and report.mae == {}
        assert report.coverage["missing"] == 1
        assert report.coverage["excluded_records"] == 1

    def test_undefined_ba_reported_as_none(self):
        key = canonical_key(parse_smiles("CCO"))
        oracle = TableOracle({key: {"HIV": 1}})
        records = [make_record(properties={"HIV": (1, "categorical")})]
        report = run_benchmark(records, EchoSystem(), oracle=oracle)
        assert report.balanced_accuracy == {"HIV": None}  # one class only

    def test_report_serialization(self):
        report = run_benchmark(echo_records(), EchoSystem())
        doc = json.loads(report.to_json())
        assert doc["tokenizer"].startswith("lowercase")
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "metric,value"
        assert any(line.startswith("validity,") for line in csv_text.splitlines())

    def test_similarity_is_tanimoto(self):
        a = parse_smiles("CCO")
        b = parse_smiles("CCO")
        assert similarity(a, b) == 1.0
        assert 0.0 <= similarity(parse_smiles("CCO"), parse_smiles("c1ccccc1")) < 1.0

    def test_oracle_loader_and_misses(self, tmp_path):
        key = canonical_key(parse_smiles("CCO"))
        p = tmp_path / "oracle.jsonl"
        p.write_text(json.dumps({"canonical_key": key, "properties": {"logP": 0.3}}) + "\n")
        oracle = TableOracle.from_file(p)
        assert oracle.lookup(key) == {"logP": 0.3}
        assert oracle.lookup("nope") is None
        cov = oracle.coverage()
        assert cov == {"requested": 2, "missing": 1, "missing_keys": ["nope"]}

    def test_oracle_loader_cites_lines(self, tmp_path):
        p = tmp_path / "oracle.jsonl"
        p.write_text("{bad}\n")
        with pytest.raises(ParseError, match="line 1"):
            TableOracle.from_file(p)
