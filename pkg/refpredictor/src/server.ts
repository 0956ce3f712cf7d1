/**
 * Transports: stdio (default) and TCP. Both feed complete lines to one
 * Handler; the single-threaded loop preserves request order, so response
 * ids come back in request order by construction.
 */

import { createInterface } from "node:readline";
import { createServer, Server } from "node:net";
import { Writable } from "node:stream";

import { Handler } from "./protocol.js";

export function attach(handler: Handler, input: NodeJS.ReadableStream, output: Writable): Promise<void> {
  return new Promise((resolve) => {
    const rl = createInterface({ input, crlfDelay: Infinity });
    rl.on("line", (line) => {
      if (!line.trim()) return;
      output.write(JSON.stringify(handler.handleLine(line)) + "\n");
    });
    rl.on("close", resolve);
  });
}

export async function serveStdio(handler: Handler): Promise<void> {
  await attach(handler, process.stdin, process.stdout);
}

export function serveTcp(handler: Handler, port: number, host = "127.0.0.1"): Promise<Server> {
  const server = createServer((socket) => {
    void attach(handler, socket, socket);
  });
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => resolve(server));
  });
}
