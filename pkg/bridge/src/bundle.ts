/**
 * FeatureBundle writer/reader: manifest.json plus tensors.bin with raw
 * little-endian row-major float32 values, matching the core's schema.
 */
import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

export interface TensorEntry {
  name: string;
  dtype: "f32";
  shape: number[];
  file: string;
  byte_offset: number;
}

export interface Manifest {
  format_version: number;
  d: number;
  tensors: TensorEntry[];
  provenance: string;
}

export interface NamedTensor {
  name: string;
  shape: number[];
  data: Float32Array;
}

const PAYLOAD_FILE = "tensors.bin";

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** JSON with recursively sorted keys so re-exports are byte-identical. */
export function stableJson(value: unknown): string {
  const sort = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sort);
    if (v !== null && typeof v === "object") {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(v as Record<string, unknown>).sort()) {
        out[key] = sort((v as Record<string, unknown>)[key]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(sort(value), null, 2) + "\n";
}

export function writeBundle(outDir: string, tensors: NamedTensor[], d: number, provenance: string): Manifest {
  mkdirSync(outDir, { recursive: true });
  let offset = 0;
  const entries: TensorEntry[] = [];
  const chunks: Buffer[] = [];
  for (const t of tensors) {
    if (t.data.length !== numel(t.shape)) {
      throw new Error(`tensor ${t.name}: ${t.data.length} values do not fill shape [${t.shape}]`);
    }
    const buf = Buffer.alloc(4 * t.data.length);
    for (let i = 0; i < t.data.length; i++) buf.writeFloatLE(t.data[i], 4 * i);
    entries.push({ name: t.name, dtype: "f32", shape: t.shape, file: PAYLOAD_FILE, byte_offset: offset });
    chunks.push(buf);
    offset += buf.length;
  }
  const manifest: Manifest = { format_version: 1, d, tensors: entries, provenance };
  writeFileSync(join(outDir, PAYLOAD_FILE), Buffer.concat(chunks));
  writeFileSync(join(outDir, "manifest.json"), stableJson(manifest), "utf-8");
  return manifest;
}

export function readBundle(dir: string): Map<string, NamedTensor> {
  const manifest = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8")) as Manifest;
  const out = new Map<string, NamedTensor>();
  const files = new Map<string, Buffer>();
  for (const entry of manifest.tensors) {
    if (!files.has(entry.file)) files.set(entry.file, readFileSync(join(dir, entry.file)));
    const raw = files.get(entry.file)!;
    const bytes = 4 * numel(entry.shape);
    if (entry.byte_offset + bytes > raw.length) {
      throw new Error(`tensor ${entry.name}: declared bytes exceed ${entry.file}`);
    }
    const data = new Float32Array(numel(entry.shape));
    for (let i = 0; i < data.length; i++) data[i] = raw.readFloatLE(entry.byte_offset + 4 * i);
    out.set(entry.name, { name: entry.name, shape: entry.shape, data });
  }
  return out;
}
