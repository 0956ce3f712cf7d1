import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { ProposalTable, TableError } from "../src/table.js";

const FIXTURE_TABLE = fileURLToPath(
  new URL("../fixtures/table.jsonl", import.meta.url),
);

function tableFrom(lines: string[]): ProposalTable {
  const dir = mkdtempSync(join(tmpdir(), "refpredictor-table-"));
  const path = join(dir, "table.jsonl");
  writeFileSync(path, lines.join("\n") + "\n");
  return ProposalTable.fromFile(path);
}

describe("ProposalTable", () => {
  it("loads the shipped fixture table", () => {
    const table = ProposalTable.fromFile(FIXTURE_TABLE);
    expect(table.size).toBe(2);
    expect(table.lookup("CCO", 50)).toEqual([
      { template_id: "tmpl_a", prob: 0.9 },
      { template_id: "tmpl_b", prob: 0.4 },
    ]);
  });

  it("truncates to k proposals and clamps k at zero", () => {
    const table = ProposalTable.fromFile(FIXTURE_TABLE);
    expect(table.lookup("CCO", 1)).toEqual([{ template_id: "tmpl_a", prob: 0.9 }]);
    expect(table.lookup("CCO", 0)).toEqual([]);
    expect(table.lookup("CCO", -3)).toEqual([]);
  });

  it("returns no proposals for an unknown product", () => {
    const table = ProposalTable.fromFile(FIXTURE_TABLE);
    expect(table.lookup("OOO", 50)).toEqual([]);
  });

  it("rejects probabilities outside (0, 1]", () => {
    expect(() =>
      tableFrom(['{"product": "CC", "proposals": [{"template_id": "a", "prob": 0.0}]}']),
    ).toThrow(TableError);
    expect(() =>
      tableFrom(['{"product": "CC", "proposals": [{"template_id": "a", "prob": 1.2}]}']),
    ).toThrow(TableError);
  });

  it("accepts prob exactly 1", () => {
    const table = tableFrom([
      '{"product": "CC", "proposals": [{"template_id": "a", "prob": 1.0}]}',
    ]);
    expect(table.lookup("CC", 5)).toEqual([{ template_id: "a", prob: 1.0 }]);
  });

  it("rejects proposals that are not sorted by descending prob", () => {
    expect(() =>
      tableFrom([
        '{"product": "CC", "proposals": [{"template_id": "a", "prob": 0.3}, {"template_id": "b", "prob": 0.7}]}',
      ]),
    ).toThrow(/descending/);
  });

  it("names the offending line in parse errors", () => {
    expect(() =>
      tableFrom(['{"product": "CC", "proposals": []}', "not json"]),
    ).toThrow(/line 2/);
  });

  it("rejects rows without a product string", () => {
    expect(() => tableFrom(['{"proposals": []}'])).toThrow(TableError);
  });
});
