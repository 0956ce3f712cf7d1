/**
 * Proposal table: product SMILES -> one-step proposals, loaded from JSONL.
 *
 * Products are keyed by the exact SMILES string in the file; the engine
 * always sends canonically written SMILES, so tables are expected to be
 * stored in that form. Unknown products yield empty proposals, not errors.
 */

import { readFileSync } from "node:fs";

export interface Proposal {
  template_id: string;
  prob: number;
}

export class TableError extends Error {}

export class ProposalTable {
  private rows: Map<string, Proposal[]>;

  constructor(rows: Map<string, Proposal[]>) {
    for (const [product, proposals] of rows) {
      let last = Infinity;
      for (const p of proposals) {
        if (!(p.prob > 0 && p.prob <= 1)) {
          throw new TableError(`prob out of (0, 1] for ${product}`);
        }
        if (p.prob > last) {
          throw new TableError(`proposals for ${product} not sorted descending`);
        }
        last = p.prob;
      }
    }
    this.rows = rows;
  }

  static fromFile(path: string): ProposalTable {
    const rows = new Map<string, Proposal[]>();
    const text = readFileSync(path, "utf-8");
    let lineno = 0;
    for (const raw of text.split("\n")) {
      lineno += 1;
      const line = raw.trim();
      if (!line) continue;
      let doc: unknown;
      try {
        doc = JSON.parse(line);
      } catch (error) {
        throw new TableError(`line ${lineno}: not valid JSON: ${error}`);
      }
      const row = doc as { product?: unknown; proposals?: unknown };
      if (typeof row.product !== "string" || !Array.isArray(row.proposals)) {
        throw new TableError(`line ${lineno}: need "product" and "proposals"`);
      }
      const proposals: Proposal[] = row.proposals.map((p, i) => {
        const entry = p as { template_id?: unknown; prob?: unknown };
        if (typeof entry.template_id !== "string" || typeof entry.prob !== "number") {
          throw new TableError(
            `line ${lineno}: proposal ${i} needs template_id and prob`,
          );
        }
        return { template_id: entry.template_id, prob: entry.prob };
      });
      rows.set(row.product, proposals);
    }
    return new ProposalTable(rows);
  }

  lookup(product: string, k: number): Proposal[] {
    const proposals = this.rows.get(product) ?? [];
    return proposals.slice(0, Math.max(0, k));
  }

  get size(): number {
    return this.rows.size;
  }
}
