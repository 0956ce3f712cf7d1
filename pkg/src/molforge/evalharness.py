"""Benchmark runner and metric suite over MolQA-shaped JSONL files.

A record asks for a molecule (drug or material) with target properties and
optionally carries a reference answer text and a reference route. The
system under test maps a record to a transcript (the orchestrator's format);
the harness extracts the designed molecule from the molecule element only,
never by scraping text, and aggregates validity, fingerprint similarity,
text metrics, per-property deviations, and retrosynthesis success.

Text tokenizer: lowercase, alphanumeric runs (punctuation is a boundary).
The choice is recorded in the report for comparability.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .chemio import parse_smiles
from .errors import EmptyList, ParseError, UndefinedMetric
from .molgraph import (
    MolecularGraph,
    attachment_points,
    canonical_key,
    check_valence,
    morgan_fingerprint,
    tanimoto,
)

TOKENIZER_NOTE = "lowercase; tokens are alphanumeric runs (regex \\w+)"

CATEGORIES = ("drug", "material")


@dataclass(frozen=True)
class BenchmarkRecord:
    question: str
    properties: dict  # name -> (value, kind), kind in {categorical, continuous}
    ref_smiles: str
    ref_route: Optional[dict] = None  # nested Route JSON
    category: str = "drug"
    ref_text: Optional[str] = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ParseError(0, f"unknown category {self.category!r}")
        for name, (value, kind) in self.properties.items():
            if kind not in ("categorical", "continuous"):
                raise ParseError(0, f"property {name}: unknown kind {kind!r}")
            if kind == "categorical" and value not in (0, 1):
                raise ParseError(0, f"property {name}: categorical value must be 0/1")


def record_from_json(doc: dict) -> BenchmarkRecord:
    props = {}
    for name, spec in dict(doc.get("properties", {})).items():
        props[name] = (spec["value"], spec["kind"])
    return BenchmarkRecord(
        question=doc["question"],
        properties=props,
        ref_smiles=doc["ref_smiles"],
        ref_route=doc.get("ref_route"),
        category=doc.get("category", "drug"),
        ref_text=doc.get("ref_text"),
    )


def load_benchmark(path) -> list[BenchmarkRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (KeyError, ValueError, ParseError) as exc:
                raise ParseError(lineno, f"line {lineno}: bad benchmark record: {exc}")
    return records


class TableOracle:
    """Property oracle backed by a canonical-key table; misses are counted
    and reported, never silently zeroed."""

    def __init__(self, table: dict[str, dict]):
        self.table = table
        self.requested = 0
        self.missing: list[str] = []

    @classmethod
    def from_file(cls, path) -> "TableOracle":
        table = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    table[doc["canonical_key"]] = dict(doc["properties"])
                except (KeyError, ValueError) as exc:
                    raise ParseError(lineno, f"line {lineno}: bad oracle row: {exc}")
        return cls(table)

    def lookup(self, key: str) -> Optional[dict]:
        self.requested += 1
        found = self.table.get(key)
        if found is None:
            self.missing.append(key)
        return found

    def coverage(self) -> dict:
        return {
            "requested": self.requested,
            "missing": len(self.missing),
            "missing_keys": list(self.missing),
        }


# -- scalar metrics ------------------------------------------------------------


def _tokenize(text: str) -> list[str]:
    return re.findall(r"\w+", text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, reference: str) -> float:
    """Geometric mean of 1-4-gram modified precisions, add-one smoothed on
    zero counts, times the brevity penalty."""
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        c_counts = _ngrams(cand, n)
        r_counts = _ngrams(ref, n)
        total = sum(c_counts.values())
        clipped = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        if clipped == 0:  # add-one smoothing floor
            p = (clipped + 1.0) / (total + 1.0)
        else:
            p = clipped / total
        log_sum += 0.25 * math.log(p)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum)


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 between token sequences; 0 when the LCS is empty."""
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    if not cand or not ref:
        return 0.0
    m, n = len(cand), len(ref)
    prev = [0] * (n + 1)
    for i in range(1, m + 1):
        cur = [0] * (n + 1)
        ci = cand[i - 1]
        for j in range(1, n + 1):
            if ci == ref[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    lcs = prev[n]
    if lcs == 0:
        return 0.0
    p = lcs / m
    r = lcs / n
    return 2 * p * r / (p + r)


def balanced_accuracy(pairs: Sequence[tuple]) -> float:
    """(TPR + TNR) / 2 over binary (true, predicted) pairs."""
    tp = tn = fp = fn = 0
    for true, pred in pairs:
        if true not in (0, 1) or pred not in (0, 1):
            raise UndefinedMetric(f"labels must be binary, got ({true}, {pred})")
        if true == 1:
            if pred == 1:
                tp += 1
            else:
                fn += 1
        else:
            if pred == 0:
                tn += 1
            else:
                fp += 1
    if tp + fn == 0 or tn + fp == 0:
        raise UndefinedMetric("both true classes must be present")
    tpr = tp / (tp + fn)
    tnr = tn / (tn + fp)
    return (tpr + tnr) / 2.0


def mae(pairs: Sequence[tuple]) -> float:
    if not pairs:
        raise EmptyList("mae needs at least one pair")
    return sum(abs(t - p) for t, p in pairs) / len(pairs)


def validity(graph, category: str) -> bool:
    """Drug: parses and passes valence; material: additionally carries at
    least two attachment points."""
    if not isinstance(graph, MolecularGraph):
        return False
    if not check_valence(graph).valid:
        return False
    if category == "material" and attachment_points(graph) < 2:
        return False
    return True


def similarity(a: MolecularGraph, b: MolecularGraph) -> float:
    return tanimoto(morgan_fingerprint(a), morgan_fingerprint(b))


# -- transcript digestion --------------------------------------------------------


def designed_molecule(transcript: Sequence[dict]) -> Optional[MolecularGraph]:
    """Last molecule element wins; no text scraping by design."""
    for element in reversed(list(transcript)):
        if element.get("kind") == "molecule":
            payload = element.get("payload") or {}
            smiles = payload.get("smiles", "")
            if not smiles:
                return None
            try:
                return parse_smiles(smiles)
            except ParseError:
                return None
    return None


def transcript_text(transcript: Sequence[dict]) -> str:
    return " ".join(
        str(e.get("payload", "")) for e in transcript if e.get("kind") == "text"
    )


def transcript_reactions(transcript: Sequence[dict]) -> list[dict]:
    return [dict(e["payload"]) for e in transcript if e.get("kind") == "reaction"]


def route_success(transcript: Sequence[dict], stock, designed) -> bool:
    """A transcript counts as a retro success when its reaction elements form
    a route whose leaf reactants are all purchasable; with no reactions at
    all, only a designed molecule that is itself in stock counts."""
    if any(e.get("kind") == "failure" for e in transcript):
        return False
    reactions = transcript_reactions(transcript)
    if not reactions:
        return designed is not None and stock.has_graph(designed)
    products = set()
    for rxn in reactions:
        try:
            products.add(canonical_key(parse_smiles(rxn["product"])))
        except ParseError:
            return False
    for rxn in reactions:
        for smi in rxn["reactants"]:
            try:
                key = canonical_key(parse_smiles(smi))
            except ParseError:
                return False
            if key not in products and key not in stock:
                return False
    return True


def route_json_reactions(doc: dict) -> list[dict]:
    """Flatten nested Route JSON into transcript-style reaction payloads."""
    out: list[dict] = []

    def walk(node: dict) -> None:
        rxn = node.get("reaction")
        if not rxn:
            return
        out.append(
            {
                "template_id": rxn["template_id"],
                "prob": rxn["prob"],
                "cost": rxn["cost"],
                "product": node["smiles"],
                "reactants": [r["smiles"] for r in rxn["reactants"]],
            }
        )
        for r in rxn["reactants"]:
            walk(r)

    if "smiles" in doc:
        walk(doc)
    return out


class EchoSystem:
    """Baseline that answers every record with its own reference: reference
    text, reference molecule, and the reference route's reactions."""

    def __call__(self, record: BenchmarkRecord) -> list[dict]:
        transcript: list[dict] = []
        if record.ref_text:
            transcript.append({"kind": "text", "payload": record.ref_text})
        transcript.append({"kind": "molecule", "payload": {"smiles": record.ref_smiles}})
        if record.ref_route:
            for rxn in route_json_reactions(record.ref_route):
                transcript.append({"kind": "reaction", "payload": rxn})
        return transcript


# -- report ---------------------------------------------------------------------


@dataclass
class MetricReport:
    validity: float
    similarity: float
    bleu4: Optional[float]
    rouge_l: Optional[float]
    balanced_accuracy: dict
    mae: dict
    retro_success: float
    counts: dict
    coverage: dict
    errors: list = field(default_factory=list)
    tokenizer: str = TOKENIZER_NOTE

    def to_json(self) -> str:
        return json.dumps(
            {
                "validity": self.validity,
                "similarity": self.similarity,
                "bleu4": self.bleu4,
                "rouge_l": self.rouge_l,
                "balanced_accuracy": self.balanced_accuracy,
                "mae": self.mae,
                "retro_success": self.retro_success,
                "counts": self.counts,
                "coverage": self.coverage,
                "errors": self.errors,
                "tokenizer": self.tokenizer,
            },
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "value"])
        writer.writerow(["validity", self.validity])
        writer.writerow(["similarity", self.similarity])
        writer.writerow(["bleu4", "" if self.bleu4 is None else self.bleu4])
        writer.writerow(["rouge_l", "" if self.rouge_l is None else self.rouge_l])
        writer.writerow(["retro_success", self.retro_success])
        for name in sorted(self.balanced_accuracy):
            value = self.balanced_accuracy[name]
            writer.writerow([f"ba_{name}", "" if value is None else value])
        for name in sorted(self.mae):
            writer.writerow([f"mae_{name}", self.mae[name]])
        return buf.getvalue()


System = Callable[[BenchmarkRecord], Sequence[dict]]


def run_benchmark(
    records: Sequence[BenchmarkRecord],
    system: System,
    oracle: Optional[TableOracle] = None,
    stock=None,
) -> MetricReport:
    """Evaluate the system record by record; per-record failures are logged
    and scored worst-case rather than aborting the run."""
    from .retro import Stock

    stock = stock if stock is not None else Stock()
    n = len(records)
    valid_count = 0
    sim_sum = 0.0
    bleu_vals: list[float] = []
    rouge_vals: list[float] = []
    success_count = 0
    ba_pairs: dict[str, list] = {}
    mae_pairs: dict[str, list] = {}
    errors: list[str] = []
    excluded_for_coverage = 0

    for idx, record in enumerate(records):
        try:
            transcript = list(system(record))
        except Exception as exc:  # the system is untrusted
            errors.append(f"record {idx}: system error: {exc}")
            continue
        designed = designed_molecule(transcript)
        is_valid = validity(designed, record.category)
        if is_valid:
            valid_count += 1
        try:
            ref_graph = parse_smiles(record.ref_smiles)
        except ParseError as exc:
            errors.append(f"record {idx}: reference does not parse: {exc}")
            ref_graph = None
        if is_valid and ref_graph is not None:
            sim_sum += similarity(designed, ref_graph)
        if record.ref_text is not None:
            text = transcript_text(transcript)
            bleu_vals.append(bleu4(text, record.ref_text))
            rouge_vals.append(rouge_l(text, record.ref_text))
        if route_success(transcript, stock, designed):
            success_count += 1
        if is_valid and record.properties and oracle is not None:
            measured = oracle.lookup(canonical_key(designed))
            if measured is None:
                excluded_for_coverage += 1
            else:
                for name, (value, kind) in record.properties.items():
                    if name not in measured:
                        continue
                    if kind == "categorical":
                        ba_pairs.setdefault(name, []).append((value, measured[name]))
                    else:
                        mae_pairs.setdefault(name, []).append((value, measured[name]))

    ba_out: dict[str, Optional[float]] = {}
    for name, pairs in sorted(ba_pairs.items()):
        try:
            ba_out[name] = balanced_accuracy(pairs)
        except UndefinedMetric:
            ba_out[name] = None
    mae_out = {name: mae(pairs) for name, pairs in sorted(mae_pairs.items())}

    coverage = oracle.coverage() if oracle is not None else {"requested": 0, "missing": 0}
    coverage["excluded_records"] = excluded_for_coverage
    return MetricReport(
        validity=valid_count / n if n else 0.0,
        similarity=sim_sum / n if n else 0.0,
        bleu4=sum(bleu_vals) / len(bleu_vals) if bleu_vals else None,
        rouge_l=sum(rouge_vals) / len(rouge_vals) if rouge_vals else None,
        balanced_accuracy=ba_out,
        mae=mae_out,
        retro_success=success_count / n if n else 0.0,
        counts={
            "records": n,
            "valid": valid_count,
            "with_ref_text": len(bleu_vals),
            "retro_success": success_count,
            "system_errors": len(errors),
        },
        coverage=coverage,
        errors=errors,
    )
