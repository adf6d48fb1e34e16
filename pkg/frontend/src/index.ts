export { MemdbClient, ConnectFailed, ServerError, TimeoutError } from "./client.js";
export { canonicalJson } from "./canonical.js";
export type {
  ClientConfig,
  CoherenceSample,
  EdgeInput,
  EdgeRow,
  Embedder,
  ExpansionOptions,
  FusionOptions,
  Micros,
  NamespaceStats,
  QueryOptions,
  RankedHit,
  RankingOptions,
  RecordInput,
  RecordRow,
  RetryPolicy,
  WireRequest,
  WireResponse,
} from "./types.js";
