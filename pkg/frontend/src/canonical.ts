/**
 * Canonical JSON: recursively sorted keys, minimal separators, raw UTF-8.
 *
 * Matches the server's canonical form byte for byte so the golden corpus
 * can be verified from both languages. Works only for JSON-safe values
 * (no undefined, functions, or non-finite numbers).
 */

export type JsonValue =
  | null
  | boolean
  | number
  | string
  | JsonValue[]
  | { [key: string]: JsonValue };

export function canonicalJson(value: JsonValue): string {
  if (value === null || typeof value === "boolean" || typeof value === "string") {
    return JSON.stringify(value);
  }
  if (typeof value === "number") {
    if (!Number.isFinite(value)) {
      throw new Error(`non-finite number is not JSON: ${value}`);
    }
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  if (typeof value === "object") {
    const keys = Object.keys(value).sort();
    return (
      "{" +
      keys.map((k) => JSON.stringify(k) + ":" + canonicalJson(value[k])).join(",") +
      "}"
    );
  }
  throw new Error(`not a JSON value: ${typeof value}`);
}
