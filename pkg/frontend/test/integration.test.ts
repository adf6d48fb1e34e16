/**
 * Live-service integration: the SDK must reproduce CLI results exactly on
 * a shared fixture, survive a server restart via its retry policy, and
 * report ConnectFailed for a dead endpoint.
 *
 * Requires the Python package installed in the environment (pip install -e ..).
 */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import * as net from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { ConnectFailed, MemdbClient } from "../src/client.js";
import type { NamespaceStats, RankedHit } from "../src/types.js";

const PYTHON = process.env.MEMDB_PYTHON ?? "python3";
const DIM = 16;
const NS = "fixture";

let workDir: string;
let dataDir: string;
let configPath: string;
let port: number;
let server: ChildProcess | null = null;
let windowFrom: number;
let windowTo: number;
let cliHits: RankedHit[];
let cliStats: NamespaceStats;

function cli(...args: string[]): string {
  return execFileSync(PYTHON, ["-m", "memdb.cli", ...args], {
    encoding: "utf-8",
    stdio: ["ignore", "pipe", "pipe"],
  });
}

function waitForPort(p: number, timeoutMs = 20_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  return new Promise((resolve, reject) => {
    const attempt = () => {
      const socket = net.createConnection({ host: "127.0.0.1", port: p });
      socket.once("connect", () => {
        socket.destroy();
        resolve();
      });
      socket.once("error", () => {
        socket.destroy();
        if (Date.now() > deadline) reject(new Error(`port ${p} never opened`));
        else setTimeout(attempt, 150);
      });
    };
    attempt();
  });
}

function startServer(): ChildProcess {
  const child = spawn(PYTHON, ["-m", "memdb.cli", "serve", "--config", configPath], {
    stdio: ["ignore", "inherit", "inherit"],
  });
  return child;
}

async function stopServer(child: ChildProcess): Promise<void> {
  await new Promise<void>((resolve) => {
    child.once("exit", () => resolve());
    child.kill("SIGTERM");
  });
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "memdb-sdk-"));
  dataDir = join(workDir, "data");
  port = 17000 + (process.pid % 20000);

  // the shared fixture, built and queried through the CLI
  const texts = [
    "alpha beta gamma", "beta gamma delta", "gamma delta epsilon",
    "delta epsilon zeta", "epsilon zeta eta", "alpha gamma epsilon",
  ];
  const ids: number[] = [];
  for (const [i, text] of texts.entries()) {
    const out = cli(
      "append", "--data-dir", dataDir, "-n", NS,
      "--kind", i % 2 ? "message" : "observation",
      "--text", text, "--dim", String(DIM),
    );
    ids.push(Number(out.trim()));
  }
  cli(
    "edge", "--data-dir", dataDir, "-n", NS,
    "--source", String(ids[0]), "--dest", String(ids[1]),
    "--rel", "follows", "--strength", "0.5", "--confidence", "0.75",
  );
  cli(
    "edge", "--data-dir", dataDir, "-n", NS,
    "--source", String(ids[1]), "--dest", String(ids[2]),
    "--rel", "follows", "--strength", "0.25", "--confidence", "0.5",
  );
  windowFrom = ids[0];
  windowTo = ids[ids.length - 1];
  cliHits = JSON.parse(
    cli(
      "query", "--data-dir", dataDir, "-n", NS,
      "--from", String(windowFrom), "--to", String(windowTo),
      "--text", "alpha gamma", "-k", "4", "--dim", String(DIM),
      "--alpha", "0.55", "--beta", "0.35", "--gamma", "0.1",
      "--rank-tau", "5000000", "--json",
    ),
  ) as RankedHit[];
  cliStats = JSON.parse(
    cli("stats", "--data-dir", dataDir, "-n", NS, "--json"),
  ) as NamespaceStats;

  writeFileSync(
    configPath = join(workDir, "memdb.json"),
    JSON.stringify({ data_dir: dataDir, host: "127.0.0.1", port, embedder_dim: DIM }),
  );
  server = startServer();
  await waitForPort(port);
}, 60_000);

afterAll(async () => {
  if (server) await stopServer(server);
  rmSync(workDir, { recursive: true, force: true });
});

describe("SDK against the live service", () => {
  test("query reproduces the CLI result exactly", async () => {
    const client = await MemdbClient.connect({ port, namespace: NS });
    const hits = await client.query([windowFrom, windowTo], {
      text: "alpha gamma",
      k: 4,
      ranking: { alpha: 0.55, beta: 0.35, gamma: 0.1, rank_tau: 5000000 },
    });
    expect(hits).toEqual(cliHits); // ids, scores, components, provenance
    client.close();
  }, 30_000);

  test("stats reproduce the CLI stats on the untouched fixture", async () => {
    const client = await MemdbClient.connect({ port, namespace: NS });
    const stats = (await client.stats()) as NamespaceStats;
    expect(stats).toEqual(cliStats);
    client.close();
  }, 30_000);

  test("append over the wire then scan and coherence", async () => {
    const client = await MemdbClient.connect({ port, namespace: NS });
    const before = (await client.stats()) as NamespaceStats;
    const idTime = await client.append({ kind: "message", text: "zeta eta theta" });
    expect(idTime).toBeGreaterThan(windowTo);
    const after = (await client.stats()) as NamespaceStats;
    expect(after.records).toBe(before.records + 1);

    const rows = await client.scan([idTime, idTime]);
    expect(rows).toHaveLength(1);
    expect(rows[0].content).toBe("zeta eta theta");

    const edge = await client.addEdge({
      source: idTime, destination: windowFrom, relationship: "refers-back",
      strength: 0.5, confidence: 0.875,
    });
    expect(edge.source).toBe(idTime);
    const sample = await client.coherence([edge.created_at, edge.created_at]);
    expect(sample.edge_count).toBe(1);
    expect(sample.c_local).toBeGreaterThan(0);
    expect(sample.c_local).toBeLessThanOrEqual(1);

    const meta = await client.updateMeta(idTime, { pinned: true });
    expect(meta.pinned).toBe(true);
    client.close();
  }, 30_000);

  test("request after a server restart is retried and succeeds", async () => {
    const client = await MemdbClient.connect({
      port, namespace: NS,
      retry: { maxAttempts: 8, backoffMs: 400 },
      timeoutMs: 15_000,
    });
    await stopServer(server!);
    const pending = client.query([windowFrom, windowTo], { text: "alpha", k: 2 });
    await new Promise((r) => setTimeout(r, 500));
    server = startServer();
    const hits = await pending;
    expect(hits.length).toBeGreaterThan(0);
    client.close();
  }, 60_000);

  test("connect to a closed port raises ConnectFailed", async () => {
    await expect(
      MemdbClient.connect({
        port: port + 1,
        retry: { maxAttempts: 2, backoffMs: 50 },
        timeoutMs: 2000,
      }),
    ).rejects.toBeInstanceOf(ConnectFailed);
  }, 15_000);
});
