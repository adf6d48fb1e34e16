/**
 * memdb wire-protocol client.
 *
 * One JSON object per line over TCP. Calls are serialized on a handle
 * (the protocol answers in order); callers that want concurrency open
 * one handle per stream. Connection-level failures are retried with
 * exponential backoff up to the configured attempt budget, then surface
 * as ConnectFailed. Server-reported errors pass through untouched as
 * ServerError with the wire code and message; the SDK never re-ranks,
 * rescores, or otherwise edits payloads.
 */

import * as net from "node:net";

import type {
  ClientConfig,
  CoherenceSample,
  EdgeInput,
  EdgeRow,
  Embedder,
  Micros,
  NamespaceStats,
  QueryOptions,
  RankedHit,
  RecordInput,
  RecordRow,
  RetryPolicy,
  WireRequest,
  WireResponse,
} from "./types.js";

export class ConnectFailed extends Error {
  constructor(message: string, readonly attempts: number) {
    super(message);
    this.name = "ConnectFailed";
  }
}

export class ServerError extends Error {
  constructor(readonly code: string, message: string) {
    super(message);
    this.name = "ServerError";
  }
}

export class TimeoutError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TimeoutError";
  }
}

const DEFAULTS = {
  host: "127.0.0.1",
  namespace: "default",
  timeoutMs: 10_000,
  retry: { maxAttempts: 3, backoffMs: 200 } satisfies RetryPolicy,
};

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

class Connection {
  private buffer = "";
  private waiter: { resolve: (line: string) => void; reject: (err: Error) => void } | null =
    null;
  private closedErr: Error | null = null;

  private constructor(private readonly socket: net.Socket) {
    socket.setEncoding("utf-8");
    socket.on("data", (chunk: string) => {
      this.buffer += chunk;
      this.pump();
    });
    const fail = (err: Error) => {
      this.closedErr = err;
      if (this.waiter) {
        this.waiter.reject(err);
        this.waiter = null;
      }
    };
    socket.on("error", fail);
    socket.on("close", () => fail(new Error("connection closed")));
  }

  static open(host: string, port: number, timeoutMs: number): Promise<Connection> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port });
      const timer = setTimeout(() => {
        socket.destroy();
        reject(new TimeoutError(`connect to ${host}:${port} timed out`));
      }, timeoutMs);
      socket.once("connect", () => {
        clearTimeout(timer);
        resolve(new Connection(socket));
      });
      socket.once("error", (err) => {
        clearTimeout(timer);
        reject(err);
      });
    });
  }

  private pump(): void {
    if (!this.waiter) return;
    const idx = this.buffer.indexOf("\n");
    if (idx < 0) return;
    const line = this.buffer.slice(0, idx);
    this.buffer = this.buffer.slice(idx + 1);
    const waiter = this.waiter;
    this.waiter = null;
    waiter.resolve(line);
  }

  roundTrip(line: string, timeoutMs: number): Promise<string> {
    if (this.closedErr) return Promise.reject(this.closedErr);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.waiter = null;
        this.socket.destroy();
        reject(new TimeoutError(`request timed out after ${timeoutMs} ms`));
      }, timeoutMs);
      this.waiter = {
        resolve: (value) => {
          clearTimeout(timer);
          resolve(value);
        },
        reject: (err) => {
          clearTimeout(timer);
          reject(err);
        },
      };
      this.socket.write(line + "\n");
      this.pump(); // a response may already be buffered
    });
  }

  get alive(): boolean {
    return this.closedErr === null;
  }

  close(): void {
    this.socket.destroy();
  }
}

export class MemdbClient {
  private readonly host: string;
  private readonly port: number;
  private readonly namespace: string;
  private readonly timeoutMs: number;
  private readonly retry: RetryPolicy;
  private readonly embedder?: Embedder;
  private connection: Connection | null = null;
  private queue: Promise<unknown> = Promise.resolve();
  private seq = 0;

  constructor(config: ClientConfig) {
    if (config.timeoutMs !== undefined && config.timeoutMs <= 0) {
      throw new Error("timeoutMs must be positive");
    }
    const retry = { ...DEFAULTS.retry, ...config.retry };
    if (retry.maxAttempts < 1) {
      throw new Error("retry.maxAttempts must be >= 1");
    }
    this.host = config.host ?? DEFAULTS.host;
    this.port = config.port;
    this.namespace = config.namespace ?? DEFAULTS.namespace;
    this.timeoutMs = config.timeoutMs ?? DEFAULTS.timeoutMs;
    this.retry = retry;
    this.embedder = config.embedder;
  }

  /** Open a handle and verify the service answers; fails after retries. */
  static async connect(config: ClientConfig): Promise<MemdbClient> {
    const client = new MemdbClient(config);
    await client.ping();
    return client;
  }

  private async ensureConnection(): Promise<Connection> {
    if (this.connection && this.connection.alive) return this.connection;
    this.connection = await Connection.open(this.host, this.port, this.timeoutMs);
    return this.connection;
  }

  private async callOnce(request: WireRequest): Promise<WireResponse> {
    const conn = await this.ensureConnection();
    const raw = await conn.roundTrip(JSON.stringify(request), this.timeoutMs);
    return JSON.parse(raw) as WireResponse;
  }

  private async callWithRetry(
    op: string,
    namespace: string | null,
    payload: Record<string, unknown>,
  ): Promise<unknown> {
    const request: WireRequest = {
      op,
      request_id: `c-${++this.seq}`,
      namespace,
      payload,
    };
    let lastError: Error | null = null;
    for (let attempt = 1; attempt <= this.retry.maxAttempts; attempt++) {
      try {
        const response = await this.callOnce(request);
        if (response.request_id !== request.request_id) {
          throw new Error(
            `response id ${response.request_id} does not match ${request.request_id}`,
          );
        }
        if (response.status === "error") {
          const err = response.error ?? { code: "Unknown", message: "no error body" };
          throw new ServerError(err.code, err.message);
        }
        return response.payload;
      } catch (err) {
        if (err instanceof ServerError) throw err; // the server answered; do not retry
        lastError = err as Error;
        this.connection?.close();
        this.connection = null;
        if (attempt < this.retry.maxAttempts) {
          await sleep(this.retry.backoffMs * 2 ** (attempt - 1));
        }
      }
    }
    throw new ConnectFailed(
      `${op} failed after ${this.retry.maxAttempts} attempts: ${lastError?.message}`,
      this.retry.maxAttempts,
    );
  }

  /** Serialize calls: one in-flight request per handle. */
  private call(op: string, payload: Record<string, unknown>, namespace?: string | null) {
    const ns = namespace === undefined ? this.namespace : namespace;
    const next = this.queue.then(() => this.callWithRetry(op, ns, payload));
    this.queue = next.catch(() => undefined);
    return next;
  }

  private withEmbedder(payload: Record<string, unknown>): Record<string, unknown> {
    if (this.embedder && typeof payload.text === "string") {
      const { text, ...rest } = payload;
      return { ...rest, vector: this.embedder(text) };
    }
    return payload;
  }

  async ping(): Promise<void> {
    await this.call("ping", {}, null);
  }

  async append(record: RecordInput, namespace?: string): Promise<Micros> {
    if (this.embedder && record.text !== undefined && record.views === undefined) {
      record = {
        ...record,
        content: record.content ?? record.text,
        views: { high: this.embedder(record.text) },
        text: undefined,
      };
    }
    const out = (await this.call("append", { ...record }, namespace)) as {
      id_time: Micros;
    };
    return out.id_time;
  }

  async appendBatch(records: RecordInput[], namespace?: string): Promise<Micros[]> {
    const out = (await this.call("batch", { records }, namespace)) as {
      id_times: Micros[];
    };
    return out.id_times;
  }

  async addEdge(edge: EdgeInput, namespace?: string): Promise<EdgeRow> {
    return (await this.call("edge", { ...edge }, namespace)) as EdgeRow;
  }

  async updateMeta(
    idTime: Micros,
    patch: Record<string, unknown>,
    namespace?: string,
  ): Promise<Record<string, unknown>> {
    const out = (await this.call("update_meta", { id_time: idTime, patch }, namespace)) as {
      meta: Record<string, unknown>;
    };
    return out.meta;
  }

  async get(
    idTime: Micros,
    opts: { includeViews?: boolean } = {},
    namespace?: string,
  ): Promise<RecordRow> {
    return (await this.call(
      "get",
      { id_time: idTime, include_views: opts.includeViews ?? false },
      namespace,
    )) as RecordRow;
  }

  async scan(
    window: [Micros, Micros],
    opts: { kind?: string; limit?: number; includeViews?: boolean } = {},
    namespace?: string,
  ): Promise<RecordRow[]> {
    const out = (await this.call(
      "scan",
      {
        window,
        kind: opts.kind,
        limit: opts.limit,
        include_views: opts.includeViews ?? false,
      },
      namespace,
    )) as { records: RecordRow[] };
    return out.records;
  }

  async query(
    window: [Micros, Micros],
    opts: QueryOptions,
    namespace?: string,
  ): Promise<RankedHit[]> {
    if (opts.text === undefined && opts.vector === undefined) {
      throw new Error("query needs text or vector");
    }
    if (window[0] > window[1]) {
      throw new Error(`invalid window: ${window[0]} > ${window[1]}`);
    }
    const payload = this.withEmbedder({ window, ...opts });
    const out = (await this.call("query", payload, namespace)) as { hits: RankedHit[] };
    return out.hits;
  }

  async coherence(
    window: [Micros, Micros],
    opts: { lambda_t?: number; lambda_s?: number; mode?: string; persist?: boolean } = {},
    namespace?: string,
  ): Promise<CoherenceSample> {
    return (await this.call("coherence", { window, ...opts }, namespace)) as CoherenceSample;
  }

  async edgesOut(
    source: Micros,
    opts: { relationship?: string; asOf?: Micros } = {},
    namespace?: string,
  ): Promise<EdgeRow[]> {
    const out = (await this.call(
      "edges_out",
      { source, relationship: opts.relationship, as_of: opts.asOf },
      namespace,
    )) as { edges: EdgeRow[] };
    return out.edges;
  }

  async stats(namespace?: string | null): Promise<NamespaceStats | Record<string, NamespaceStats>> {
    return (await this.call("stats", {}, namespace)) as
      | NamespaceStats
      | Record<string, NamespaceStats>;
  }

  async compact(segmentId: number, namespace?: string): Promise<number> {
    const out = (await this.call("compact", { segment_id: segmentId }, namespace)) as {
      bytes_reclaimed: number;
    };
    return out.bytes_reclaimed;
  }

  async maintenance(namespace?: string): Promise<Record<string, unknown>> {
    return (await this.call("maintenance", {}, namespace)) as Record<string, unknown>;
  }

  close(): void {
    this.connection?.close();
    this.connection = null;
  }
}
