/**
 * Pluggable frozen encoders. The bridge owns all model execution; the
 * core package only ever sees the exported bundles.
 *
 * Two built-ins:
 *  - hash-v1: a deterministic offline stand-in (seeded gaussian from a
 *    SHA-256 digest, unit-normalized) for development and tests;
 *  - an embeddings-endpoint client for serving real encoder features
 *    over a generic `/embeddings` API.
 */
import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  encodeText(text: string): Promise<Float32Array>;
  encodeImage(path: string): Promise<Float32Array>;
}

function normalize(v: Float32Array): Float32Array {
  let sq = 0;
  for (const x of v) sq += x * x;
  const n = Math.sqrt(sq);
  if (n === 0) throw new Error("cannot normalize a zero vector");
  for (let i = 0; i < v.length; i++) v[i] /= n;
  return v;
}

/** Deterministic unit vector from a digest: xorshift128 + Box-Muller. */
function digestToUnitVector(digest: Buffer, dim: number): Float32Array {
  let s0 = digest.readBigUInt64LE(0) | 1n;
  let s1 = digest.readBigUInt64LE(8) | 1n;
  const mask = (1n << 64n) - 1n;
  const next = (): number => {
    let x = s0;
    const y = s1;
    s0 = y;
    x = (x ^ (x << 23n)) & mask;
    x ^= x >> 17n;
    x ^= y ^ (y >> 26n);
    s1 = x;
    const sum = (x + y) & mask;
    return Number(sum >> 11n) / 2 ** 53;
  };
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i += 2) {
    const u1 = Math.max(next(), 1e-12);
    const u2 = next();
    const r = Math.sqrt(-2 * Math.log(u1));
    out[i] = r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < dim) out[i + 1] = r * Math.sin(2 * Math.PI * u2);
  }
  return normalize(out);
}

export class HashEncoder implements Encoder {
  readonly id = "hash-v1";

  constructor(readonly dim: number = 512) {}

  private vectorFor(kind: string, payload: Buffer | string): Float32Array {
    const digest = createHash("sha256").update(this.id).update(kind).update(payload).digest();
    return digestToUnitVector(digest, this.dim);
  }

  async encodeText(text: string): Promise<Float32Array> {
    return this.vectorFor("text", text);
  }

  async encodeImage(path: string): Promise<Float32Array> {
    return this.vectorFor("image", readFileSync(path));
  }
}

export interface EndpointEncoderConfig {
  baseUrl: string;
  dim: number;
  model?: string;
  apiKey?: string;
  fetchFn?: typeof fetch;
}

export class EndpointEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;
  private readonly cfg: EndpointEncoderConfig;

  constructor(cfg: EndpointEncoderConfig) {
    this.cfg = cfg;
    this.dim = cfg.dim;
    this.id = `endpoint:${cfg.baseUrl}`;
  }

  private async embed(input: string): Promise<Float32Array> {
    const doFetch = this.cfg.fetchFn ?? fetch;
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.cfg.apiKey) headers.Authorization = `Bearer ${this.cfg.apiKey}`;
    const response = await doFetch(`${this.cfg.baseUrl}/embeddings`, {
      method: "POST",
      headers,
      body: JSON.stringify({ model: this.cfg.model ?? "default", input }),
    });
    if (!response.ok) throw new Error(`embeddings endpoint: HTTP ${response.status}`);
    const body = (await response.json()) as { data: { embedding: number[] }[] };
    const raw = body.data[0].embedding;
    if (raw.length !== this.dim) {
      throw new Error(`embeddings endpoint returned dim ${raw.length}, expected ${this.dim}`);
    }
    return normalize(Float32Array.from(raw));
  }

  async encodeText(text: string): Promise<Float32Array> {
    return this.embed(text);
  }

  async encodeImage(path: string): Promise<Float32Array> {
    return this.embed(`image:${readFileSync(path).toString("base64")}`);
  }
}

export function makeEncoder(id: string, dim: number): Encoder {
  if (id === "hash-v1") return new HashEncoder(dim);
  if (id.startsWith("endpoint:")) {
    return new EndpointEncoder({
      baseUrl: id.slice("endpoint:".length),
      dim,
      apiKey: process.env.BRIDGE_EMBED_API_KEY,
    });
  }
  throw new Error(`unknown encoder ${id}; expected "hash-v1" or "endpoint:<base-url>"`);
}
