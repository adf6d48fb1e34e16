/** Client behavior against an in-process mock server (no Python needed). */

import * as net from "node:net";
import { afterEach, describe, expect, test } from "vitest";

import { ConnectFailed, MemdbClient, ServerError } from "../src/client.js";

type Script = (req: Record<string, unknown>) => Record<string, unknown> | null;

class MockServer {
  private server: net.Server;
  public requests: Record<string, unknown>[] = [];

  constructor(private script: Script) {
    this.server = net.createServer((socket) => {
      let buffer = "";
      socket.on("data", (chunk) => {
        buffer += chunk.toString("utf-8");
        let idx: number;
        while ((idx = buffer.indexOf("\n")) >= 0) {
          const line = buffer.slice(0, idx);
          buffer = buffer.slice(idx + 1);
          const req = JSON.parse(line) as Record<string, unknown>;
          this.requests.push(req);
          const resp = this.script(req);
          if (resp === null) {
            socket.destroy(); // simulate a crash mid-request
          } else {
            socket.write(JSON.stringify(resp) + "\n");
          }
        }
      });
    });
  }

  listen(): Promise<number> {
    return new Promise((resolve) => {
      this.server.listen(0, "127.0.0.1", () => {
        resolve((this.server.address() as net.AddressInfo).port);
      });
    });
  }

  close(): Promise<void> {
    return new Promise((resolve) => this.server.close(() => resolve()));
  }
}

const okEcho: Script = (req) => ({
  request_id: req.request_id,
  status: "ok",
  payload: { pong: true, op: req.op },
});

let servers: MockServer[] = [];
afterEach(async () => {
  for (const s of servers) await s.close();
  servers = [];
});

async function mock(script: Script): Promise<[MockServer, number]> {
  const server = new MockServer(script);
  servers.push(server);
  return [server, await server.listen()];
}

describe("MemdbClient", () => {
  test("connect pings and resolves", async () => {
    const [server, port] = await mock(okEcho);
    const client = await MemdbClient.connect({ port });
    expect(server.requests[0].op).toBe("ping");
    client.close();
  });

  test("connect to a closed port fails after retries", async () => {
    const [, port] = await mock(okEcho);
    await servers.pop()!.close();
    const started = Date.now();
    await expect(
      MemdbClient.connect({ port, retry: { maxAttempts: 2, backoffMs: 10 } }),
    ).rejects.toBeInstanceOf(ConnectFailed);
    expect(Date.now() - started).toBeLessThan(5000);
  });

  test("server errors surface with code and message, no retry", async () => {
    const [server, port] = await mock((req) => ({
      request_id: req.request_id,
      status: "error",
      error: { code: "NotFound", message: "no record at 7" },
    }));
    const client = new MemdbClient({ port, retry: { maxAttempts: 3, backoffMs: 5 } });
    const err = await client.get(7).catch((e) => e);
    expect(err).toBeInstanceOf(ServerError);
    expect((err as ServerError).code).toBe("NotFound");
    expect(server.requests.length).toBe(1); // a served error is final
    client.close();
  });

  test("dropped connection is retried and succeeds", async () => {
    let first = true;
    const [server, port] = await mock((req) => {
      if (first && req.op === "stats") {
        first = false;
        return null; // kill the socket on the first stats call
      }
      return { request_id: req.request_id, status: "ok", payload: { records: 3 } };
    });
    const client = new MemdbClient({ port, retry: { maxAttempts: 3, backoffMs: 10 } });
    const stats = await client.stats("ns");
    expect(stats).toEqual({ records: 3 });
    expect(server.requests.filter((r) => r.op === "stats").length).toBe(2);
    client.close();
  });

  test("payloads pass through untouched (no client-side ranking)", async () => {
    const hits = [
      { id_time: 5, score: 0.25, sim: 0.25, temporal_decay: 0.5, phi: 0.125,
        provenance: { kind: "direct", edge_id: null, hop: 0 } },
      { id_time: 1, score: 0.75, sim: 0.75, temporal_decay: 0.5, phi: 0.125,
        provenance: { kind: "direct", edge_id: null, hop: 0 } },
    ];
    const [, port] = await mock((req) => ({
      request_id: req.request_id,
      status: "ok",
      payload: { hits },
    }));
    const client = new MemdbClient({ port });
    // deliberately mis-ordered server response: the client must not "fix" it
    const got = await client.query([0, 10], { vector: [0.6, 0.8] });
    expect(got).toEqual(hits);
    client.close();
  });

  test("client-side embedder hook replaces text with a vector", async () => {
    const [server, port] = await mock(okEcho);
    const embedder = (text: string) => (text === "hello" ? [0.6, 0.8] : [1.0, 0.0]);
    const client = new MemdbClient({ port, embedder });
    await client.query([0, 10], { text: "hello", k: 2 });
    const payload = server.requests.at(-1)!.payload as Record<string, unknown>;
    expect(payload.vector).toEqual([0.6, 0.8]);
    expect(payload.text).toBeUndefined();
    client.close();
  });

  test("client-side validation: missing text and vector", async () => {
    const [, port] = await mock(okEcho);
    const client = new MemdbClient({ port });
    await expect(client.query([0, 10], {})).rejects.toThrow(/text or vector/);
    client.close();
  });

  test("config validation", () => {
    expect(() => new MemdbClient({ port: 1, timeoutMs: 0 })).toThrow();
    expect(() => new MemdbClient({ port: 1, retry: { maxAttempts: 0 } })).toThrow();
  });

  test("request ids increase and responses must match", async () => {
    const [server, port] = await mock(okEcho);
    const client = new MemdbClient({ port });
    await client.ping();
    await client.ping();
    const ids = server.requests.map((r) => r.request_id);
    expect(new Set(ids).size).toBe(ids.length);
    client.close();
  });
});
