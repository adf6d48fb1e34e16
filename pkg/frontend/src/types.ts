/** Wire protocol types: one JSON object per line in each direction. */

export type Micros = number; // integer microseconds; exact in doubles until year ~2255

export interface WireRequest {
  op: string;
  request_id: string;
  namespace: string | null;
  payload: Record<string, unknown>;
}

export interface WireError {
  code: string;
  message: string;
}

export interface WireResponse {
  request_id: string | null;
  status: "ok" | "error";
  payload?: unknown;
  error?: WireError;
}

export interface RecordInput {
  kind: string;
  content?: string;
  /** Server-side embedding of this text when no views are given. */
  text?: string;
  views?: Record<string, number[]>;
  meta?: Record<string, unknown>;
}

export interface EdgeInput {
  source: Micros;
  destination: Micros;
  relationship: string;
  strength?: number;
  confidence?: number;
  meta?: Record<string, unknown>;
}

export interface EdgeRow {
  edge_id: number;
  source: Micros;
  destination: Micros;
  relationship: string;
  strength: number;
  confidence: number;
  meta: Record<string, unknown>;
  created_at: Micros;
}

export interface RecordRow {
  id_time: Micros;
  kind: string;
  content: string | null;
  meta: Record<string, unknown>;
  views?: Record<string, number[]>;
  view_dims?: Record<string, number>;
}

export interface RankingOptions {
  alpha?: number;
  beta?: number;
  gamma?: number;
  rank_tau?: number;
  phi_relation_boost?: Record<string, number>;
}

export interface FusionOptions {
  kind?: "identity" | "weighted" | "rrf";
  weights?: Record<string, number>;
  k_rrf?: number;
}

export interface ExpansionOptions {
  threshold: number;
  max_hops?: number;
  coherence?: { lambda_t?: number; lambda_s?: number; mode?: "practical" | "idealized" };
}

export interface QueryOptions {
  text?: string;
  vector?: number[];
  k?: number;
  kind?: string;
  meta_equals?: Record<string, unknown>;
  meta_exists?: string[];
  relationships?: string[];
  expansion?: ExpansionOptions;
  ranking?: RankingOptions;
  fusion?: FusionOptions;
  exact?: boolean;
  k_coarse?: number;
}

export interface RankedHit {
  id_time: Micros;
  score: number;
  sim: number;
  temporal_decay: number;
  phi: number;
  provenance: { kind: "direct" | "expanded"; edge_id: number | null; hop: number };
}

export interface CoherenceSample {
  window: [Micros, Micros];
  edge_count: number;
  c_local: number | null;
  computed_at: Micros;
}

export interface NamespaceStats {
  namespace: string;
  records: number;
  edges: number;
  pruned_edges: number;
  segments: number;
  view_dims: Record<string, number>;
  coherence_samples: number;
  mean_coherence: number | null;
  maintenance_cycles: number;
  last_minted: Micros;
}

/** Client-side embedder hook: text to a unit vector of the store's dimension. */
export type Embedder = (text: string) => number[];

export interface RetryPolicy {
  /** Total connection attempts per call (>= 1). */
  maxAttempts: number;
  /** Base backoff in ms, doubled per retry. */
  backoffMs: number;
}

export interface ClientConfig {
  host?: string;
  port: number;
  namespace?: string;
  timeoutMs?: number;
  retry?: Partial<RetryPolicy>;
  embedder?: Embedder;
}
