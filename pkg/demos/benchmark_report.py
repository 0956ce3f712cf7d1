"""Score a system over the bundled 50-record benchmark.

The system under test here is the echo baseline: it answers every record
with that record's own reference molecule, text and route. Echoing the
references pins every metric at its ceiling, which makes this a quick
self-check of the whole scoring path (validity, fingerprint similarity,
BLEU-4, ROUGE-L, route success, property BA/MAE via the oracle table).
Run from the repo root:

    python3 demos/benchmark_report.py [--csv out.csv]
"""

import argparse

from molforge._data import data_path
from molforge.evalharness import EchoSystem, TableOracle, load_benchmark, run_benchmark
from molforge.retro import Stock


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", help="also write the flat CSV here")
    args = ap.parse_args()

    records = load_benchmark(data_path("benchmark_desk.jsonl"))
    oracle = TableOracle.from_file(data_path("oracle_desk.jsonl"))
    stock = Stock.from_file(data_path("stock_desk.txt"))
    print(f"records {len(records)}  oracle rows {len(oracle.table)}  stock {len(stock)}")

    report = run_benchmark(records, EchoSystem(), oracle, stock=stock)

    print("\nmetric report")
    print(f"  validity       {report.validity:.4f}")
    print(f"  similarity     {report.similarity:.4f}")
    print(f"  bleu4          {report.bleu4:.4f}")
    print(f"  rouge_l        {report.rouge_l:.4f}")
    print(f"  retro_success  {report.retro_success:.4f}")
    for name in sorted(report.balanced_accuracy):
        print(f"  {'BA[' + name + ']':<14} {report.balanced_accuracy[name]:.4f}")
    for name in sorted(report.mae):
        print(f"  {'MAE[' + name + ']':<14} {report.mae[name]:.4f}")
    print(f"  counts         {report.counts}")
    print(f"  coverage       requested={report.coverage['requested']} "
          f"missing={report.coverage['missing']}")

    # retro_success < 1.0 is expected: unrouted and material records carry
    # no reactions, so even a perfect echo cannot claim a route for them
    routed = sum(1 for r in records if r.ref_route and "reaction" in r.ref_route)
    print(f"\nrouted references: {routed}/{len(records)} "
          f"-> echo retro_success {routed / len(records):.2f}")

    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        print(f"csv written to {args.csv}")


if __name__ == "__main__":
    main()
