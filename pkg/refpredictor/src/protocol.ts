/**
 * Wire-protocol request handling: newline-delimited JSON, one response per
 * request, ids echoed back. Three request types:
 *
 *   expand    {product, context, k}        -> {proposals}
 *   heuristic {target, step, ...}          -> {probs}  (softmax of fixed logits)
 *   denoise   {tokens, t, conditions}      -> {x0_probs}  (toy: identity)
 *
 * A request that cannot be parsed to an object with a numeric id gets
 * {"id": null, "error": ...}; a well-formed request with a bad payload gets
 * the error under its own id. The caller keeps serving either way.
 */

import { ProposalTable } from "./table.js";

export interface ErrorResponse {
  id: number | null;
  error: string;
}

export type Response =
  | ErrorResponse
  | { id: number; proposals: { template_id: string; prob: number }[] }
  | { id: number; probs: number[] }
  | { id: number; x0_probs: number[][] };

export function softmax(logits: number[]): number[] {
  const top = Math.max(...logits);
  const exps = logits.map((x) => Math.exp(x - top));
  const total = exps.reduce((a, b) => a + b, 0);
  return exps.map((x) => x / total);
}

export const N_CHOICES = 5;

export class Handler {
  table: ProposalTable;
  logits: number[];

  constructor(table: ProposalTable, logits?: number[]) {
    if (logits !== undefined && logits.length !== N_CHOICES) {
      throw new Error(`need ${N_CHOICES} heuristic logits`);
    }
    this.table = table;
    this.logits = logits ?? new Array(N_CHOICES).fill(0);
  }

  handleLine(line: string): Response {
    let doc: unknown;
    try {
      doc = JSON.parse(line);
    } catch (error) {
      return { id: null, error: `not valid JSON: ${error}` };
    }
    if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
      return { id: null, error: "request must be a JSON object" };
    }
    const req = doc as Record<string, unknown>;
    if (typeof req.id !== "number" || !Number.isInteger(req.id)) {
      return { id: null, error: "request needs an integer id" };
    }
    const id = req.id;
    switch (req.type) {
      case "expand":
        return this.expand(id, req);
      case "heuristic":
        return { id, probs: softmax(this.logits) };
      case "denoise":
        return this.denoise(id, req);
      default:
        return { id, error: `unknown request type ${JSON.stringify(req.type)}` };
    }
  }

  private expand(id: number, req: Record<string, unknown>): Response {
    if (typeof req.product !== "string") {
      return { id, error: "expand needs a string product" };
    }
    const k = typeof req.k === "number" ? req.k : 50;
    return { id, proposals: this.table.lookup(req.product, k) };
  }

  private denoise(id: number, req: Record<string, unknown>): Response {
    const tokens = req.tokens;
    if (!Array.isArray(tokens) || !tokens.every(isNumberRow)) {
      return { id, error: "denoise needs tokens as a matrix of numbers" };
    }
    // toy denoiser: the observed one-hot rows are already distributions
    return { id, x0_probs: tokens as number[][] };
  }
}

function isNumberRow(row: unknown): boolean {
  return Array.isArray(row) && row.every((x) => typeof x === "number" && Number.isFinite(x));
}
