/**
 * Golden-fixture self-test. A fixtures directory holds table.jsonl,
 * requests.jsonl and responses.jsonl; the runner replays every request
 * through a fresh Handler and compares against the golden response line
 * by line. Numbers are compared to 9 significant digits so that float
 * formatting differences across writers do not matter; everything else
 * must match exactly, including the id-order contract (response i must
 * carry request i's id).
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";

import { Handler } from "./protocol.js";
import { ProposalTable } from "./table.js";

export interface ConformanceResult {
  ok: boolean;
  checked: number;
  failures: string[];
}

function lines(path: string): string[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((l) => l.trim());
}

function sameNumber(a: number, b: number): boolean {
  return a.toPrecision(9) === b.toPrecision(9);
}

/** Structural equality, numbers to 9 significant digits; returns the path
 * of the first difference or null. */
export function diffValues(got: unknown, want: unknown, path = "$"): string | null {
  if (typeof got === "number" && typeof want === "number") {
    return sameNumber(got, want) ? null : `${path}: ${got} != ${want}`;
  }
  if (Array.isArray(got) && Array.isArray(want)) {
    if (got.length !== want.length) {
      return `${path}: length ${got.length} != ${want.length}`;
    }
    for (let i = 0; i < got.length; i++) {
      const d = diffValues(got[i], want[i], `${path}[${i}]`);
      if (d) return d;
    }
    return null;
  }
  if (
    typeof got === "object" && got !== null && !Array.isArray(got) &&
    typeof want === "object" && want !== null && !Array.isArray(want)
  ) {
    const g = got as Record<string, unknown>;
    const w = want as Record<string, unknown>;
    const keys = new Set([...Object.keys(g), ...Object.keys(w)]);
    for (const key of [...keys].sort()) {
      if (!(key in g)) return `${path}.${key}: missing in produced response`;
      if (!(key in w)) return `${path}.${key}: not in golden response`;
      const d = diffValues(g[key], w[key], `${path}.${key}`);
      if (d) return d;
    }
    return null;
  }
  if (got === want) return null;
  return `${path}: ${JSON.stringify(got)} != ${JSON.stringify(want)}`;
}

export function runConformance(fixturesDir: string, logits?: number[]): ConformanceResult {
  const table = ProposalTable.fromFile(join(fixturesDir, "table.jsonl"));
  const handler = new Handler(table, logits);
  const requests = lines(join(fixturesDir, "requests.jsonl"));
  const golden = lines(join(fixturesDir, "responses.jsonl"));
  const failures: string[] = [];
  if (requests.length !== golden.length) {
    failures.push(
      `fixture mismatch: ${requests.length} requests vs ${golden.length} responses`,
    );
    return { ok: false, checked: 0, failures };
  }
  for (let i = 0; i < requests.length; i++) {
    const req = JSON.parse(requests[i]) as { id?: unknown };
    const reqId = typeof req.id === "number" ? req.id : null;
    const want = JSON.parse(golden[i]) as { id?: unknown };
    if ((want.id ?? null) !== reqId) {
      failures.push(
        `request id ${reqId}: golden response carries id ${JSON.stringify(want.id)} (out of order)`,
      );
      continue;
    }
    const got = handler.handleLine(requests[i]);
    const diff = diffValues(got, want);
    if (diff) {
      failures.push(`request id ${reqId}: ${diff}`);
    }
  }
  return { ok: failures.length === 0, checked: requests.length, failures };
}
