#!/usr/bin/env node
/**
 * Entry point. Two subcommands:
 *
 *   serve        --table PATH [--stdio | --tcp PORT] [--logits a,b,c,d,e]
 *   conformance  --fixtures DIR [--logits a,b,c,d,e]
 *
 * serve answers newline-delimited JSON requests until the input stream
 * closes; a broken table file is a startup failure (exit 1), anything
 * after startup is reported in-band and never kills the process.
 */

import { runConformance } from "./conformance.js";
import { Handler } from "./protocol.js";
import { serveStdio, serveTcp } from "./server.js";
import { ProposalTable, TableError } from "./table.js";

const USAGE = `usage:
  refpredictor serve --table PATH [--stdio | --tcp PORT] [--logits a,b,c,d,e]
  refpredictor conformance --fixtures DIR [--logits a,b,c,d,e]`;

interface Flags {
  [key: string]: string | true;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) {
      throw new Error(`unexpected argument: ${arg}`);
    }
    const name = arg.slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
      flags[name] = argv[++i];
    } else {
      flags[name] = true;
    }
  }
  return flags;
}

function parseLogits(raw: string | true | undefined): number[] | undefined {
  if (raw === undefined) return undefined;
  if (raw === true) throw new Error("--logits needs a comma-separated list");
  const parts = raw.split(",").map((p) => Number(p.trim()));
  if (parts.some((p) => !Number.isFinite(p))) {
    throw new Error(`--logits must be finite numbers, got: ${raw}`);
  }
  return parts;
}

async function cmdServe(flags: Flags): Promise<number> {
  const tablePath = flags["table"];
  if (typeof tablePath !== "string") {
    process.stderr.write("serve needs --table PATH\n");
    return 1;
  }
  const table = ProposalTable.fromFile(tablePath);
  const handler = new Handler(table, parseLogits(flags["logits"]));
  if (flags["tcp"] !== undefined) {
    const port = Number(flags["tcp"]);
    if (!Number.isInteger(port) || port < 0 || port > 65535) {
      process.stderr.write(`--tcp needs a port number, got: ${flags["tcp"]}\n`);
      return 1;
    }
    const server = await serveTcp(handler, port);
    const addr = server.address();
    if (addr && typeof addr === "object") {
      process.stderr.write(`listening on ${addr.address}:${addr.port}\n`);
    }
    // Runs until killed.
    await new Promise(() => {});
    return 0;
  }
  await serveStdio(handler);
  return 0;
}

function cmdConformance(flags: Flags): number {
  const dir = flags["fixtures"];
  if (typeof dir !== "string") {
    process.stderr.write("conformance needs --fixtures DIR\n");
    return 1;
  }
  const result = runConformance(dir, parseLogits(flags["logits"]));
  for (const failure of result.failures) {
    process.stderr.write(`FAIL ${failure}\n`);
  }
  if (result.ok) {
    process.stdout.write(`conformance: ${result.checked} requests ok\n`);
    return 0;
  }
  process.stderr.write(
    `conformance: ${result.failures.length} failure(s) over ${result.checked} requests\n`,
  );
  return 1;
}

async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "serve") {
      return await cmdServe(parseFlags(rest));
    }
    if (command === "conformance") {
      return cmdConformance(parseFlags(rest));
    }
  } catch (err) {
    if (err instanceof TableError || err instanceof Error) {
      process.stderr.write(`error: ${err.message}\n`);
      return 1;
    }
    throw err;
  }
  process.stderr.write(USAGE + "\n");
  return 2;
}

main(process.argv.slice(2)).then((code) => {
  process.exitCode = code;
});
