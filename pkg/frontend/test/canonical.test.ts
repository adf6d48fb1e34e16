import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { describe, expect, test } from "vitest";

import { canonicalJson, type JsonValue } from "../src/canonical.js";

const here = dirname(fileURLToPath(import.meta.url));
const corpusPath = join(here, "..", "..", "protocol", "golden.jsonl");

function corpusLines(): string[] {
  return readFileSync(corpusPath, "utf-8").split("\n").filter((l) => l.length > 0);
}

describe("golden corpus", () => {
  test("every message round-trips byte-identically", () => {
    const lines = corpusLines();
    expect(lines.length).toBeGreaterThan(20);
    for (const line of lines) {
      const parsed = JSON.parse(line) as JsonValue;
      expect(canonicalJson(parsed)).toBe(line);
    }
  });

  test("covers the full op surface", () => {
    const ops = new Set<string>();
    for (const line of corpusLines()) {
      const parsed = JSON.parse(line) as { op?: string };
      if (parsed.op) ops.add(parsed.op);
    }
    for (const op of [
      "ping", "append", "batch", "edge", "update_meta", "get",
      "scan", "query", "coherence", "edges_out", "stats", "maintenance",
    ]) {
      expect(ops, `missing op ${op}`).toContain(op);
    }
  });

  test("responses echo their request ids", () => {
    const byId = new Map<string, string>();
    for (const line of corpusLines()) {
      const parsed = JSON.parse(line) as {
        op?: string;
        status?: string;
        request_id: string | null;
      };
      if (parsed.op && parsed.request_id) byId.set(parsed.request_id, parsed.op);
      if (parsed.status && parsed.request_id !== null) {
        expect(byId.has(parsed.request_id)).toBe(true);
      }
    }
  });
});

describe("canonicalJson", () => {
  test("sorts keys recursively", () => {
    expect(canonicalJson({ b: { z: 1, a: [true, null] }, a: "x" })).toBe(
      '{"a":"x","b":{"a":[true,null],"z":1}}',
    );
  });

  test("keeps unicode raw", () => {
    expect(canonicalJson({ s: "naïve café 日本語" })).toBe('{"s":"naïve café 日本語"}');
  });

  test("rejects non-finite numbers", () => {
    expect(() => canonicalJson({ x: Infinity } as never)).toThrow();
  });
});
