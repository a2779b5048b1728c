/**
 * The export job: encode anchors, images and the five-dimension prompt
 * pool into a provider bundle the core package loads unchanged.
 *
 * Differential targets come from a zero-shot confusion matrix computed
 * here. When a chat endpoint is configured, each (class, dimension)
 * slot's description is generated remotely with bounded concurrency;
 * endpoint failures fall back to the rendered template text and are
 * flagged per slot. Without an endpoint every slot is a flagged
 * fallback. kb.json records every raw prompt/response pair.
 */
import { writeFileSync } from "node:fs";
import { join } from "node:path";

import { ChatConfig, boundedMap, chatComplete } from "./chat.js";
import { NamedTensor, stableJson, writeBundle } from "./bundle.js";
import { confusableMap, zeroShotConfusion } from "./confusion.js";
import { Encoder, makeEncoder } from "./encoder.js";
import { DEFAULT_WORD_COUNT, DIMENSIONS, Dimension, renderAnchor, renderPrompt } from "./templates.js";

export interface ImageEntry {
  path: string;
  label: number;
}

export interface ExportJob {
  classNames: string[];
  images: ImageEntry[];
  encoder: string;            // "hash-v1" or "endpoint:<base-url>"
  dim?: number;
  chat?: ChatConfig | null;   // omit or null for template-only fallback mode
  targetWordCount?: number;
  outDir: string;
}

export interface GenerationRecord {
  class_id: number;
  dimension: Dimension;
  prompt: string;
  response: string | null;
  fallback: boolean;
}

export interface ExportResult {
  outDir: string;
  dim: number;
  fallbackSlots: number;
  totalSlots: number;
  offNormRows: number;
}

export interface ExportDeps {
  encoderFactory?: (id: string, dim: number) => Encoder;
}

function flatten(rows: Float32Array[], dim: number, name: string): Float32Array {
  const out = new Float32Array(rows.length * dim);
  rows.forEach((row, i) => {
    if (row.length !== dim) {
      throw new Error(`${name} row ${i} has dim ${row.length}, expected ${dim}`);
    }
    out.set(row, i * dim);
  });
  return out;
}

function countOffNormRows(rows: Float32Array[]): number {
  let bad = 0;
  for (const row of rows) {
    let sq = 0;
    for (const x of row) sq += x * x;
    if (Math.abs(Math.sqrt(sq) - 1) > 1e-3) bad++;
  }
  return bad;
}

export async function exportFeatures(job: ExportJob, deps: ExportDeps = {}): Promise<ExportResult> {
  const C = job.classNames.length;
  if (C < 2) throw new Error("need at least two classes");
  if (job.images.length === 0) throw new Error("image manifest is empty");
  const dim = job.dim ?? 512;
  const wordCount = job.targetWordCount ?? DEFAULT_WORD_COUNT;
  const encoder = (deps.encoderFactory ?? makeEncoder)(job.encoder, dim);
  if (encoder.dim !== dim) {
    throw new Error(`encoder ${encoder.id} serves dim ${encoder.dim}, job declares ${dim}`);
  }

  const anchors: Float32Array[] = [];
  for (const name of job.classNames) {
    anchors.push(await encoder.encodeText(renderAnchor(name)));
  }

  const images: Float32Array[] = [];
  const labels: number[] = [];
  for (const entry of job.images) {
    if (entry.label < 0 || entry.label >= C) {
      throw new Error(`image ${entry.path}: label ${entry.label} outside [0, ${C})`);
    }
    images.push(await encoder.encodeImage(entry.path));
    labels.push(entry.label);
  }

  const K = zeroShotConfusion(images, labels, anchors);
  const confusable = confusableMap(K, anchors);

  // one slot per (class, dimension), placed deterministically by index
  const slots = C * DIMENSIONS.length;
  const records = await boundedMap(slots, job.chat?.concurrency ?? 4, async (slot) => {
    const c = Math.floor(slot / DIMENSIONS.length);
    const dimension = DIMENSIONS[slot % DIMENSIONS.length];
    const confusableName = dimension === "DF" ? job.classNames[confusable[c]] : undefined;
    const prompt = renderPrompt(dimension, job.classNames[c], confusableName, wordCount);
    if (!job.chat) {
      return { class_id: c, dimension, prompt, response: null, fallback: true } satisfies GenerationRecord;
    }
    try {
      const response = await chatComplete(job.chat, prompt);
      return { class_id: c, dimension, prompt, response, fallback: false } satisfies GenerationRecord;
    } catch {
      return { class_id: c, dimension, prompt, response: null, fallback: true } satisfies GenerationRecord;
    }
  });

  const pool: Float32Array[] = [];
  for (const record of records) {
    // fallback slots embed the rendered template text itself
    pool.push(await encoder.encodeText(record.response ?? record.prompt));
  }

  const fallbackSlots = records.filter((r) => r.fallback).length;
  const offNormRows = countOffNormRows(anchors) + countOffNormRows(images) + countOffNormRows(pool);
  const provenance =
    `bridge-exporter encoder=${encoder.id} d=${dim} classes=${C} images=${images.length} ` +
    `fallback_slots=${fallbackSlots}/${slots} off_norm_rows=${offNormRows}` +
    (job.chat ? ` chat=${job.chat.baseUrl}` : " chat=disabled");

  const tensors: NamedTensor[] = [
    { name: "class_anchors", shape: [C, dim], data: flatten(anchors, dim, "class_anchors") },
    { name: "prompt_pool", shape: [C, DIMENSIONS.length, dim], data: flatten(pool, dim, "prompt_pool") },
    { name: "image_features", shape: [images.length, dim], data: flatten(images, dim, "image_features") },
    { name: "image_labels", shape: [images.length], data: Float32Array.from(labels) },
  ];
  writeBundle(job.outDir, tensors, dim, provenance);

  const prompts = job.classNames.map((_, c) =>
    DIMENSIONS.map((dimension, v) => {
      const record = records[c * DIMENSIONS.length + v];
      const entry: Record<string, unknown> = {
        dimension,
        text: record.prompt,
        word_count: wordCount,
      };
      if (dimension === "DF") entry.confusable = confusable[c];
      return entry;
    }),
  );
  writeFileSync(
    join(job.outDir, "kb.json"),
    stableJson({
      format_version: 1,
      class_names: job.classNames,
      dim_labels: [...DIMENSIONS],
      prompts,
      confusable,
      provenance,
      generation: records,
    }),
    "utf-8",
  );

  return { outDir: job.outDir, dim, fallbackSlots, totalSlots: slots, offNormRows };
}
