import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { readBundle, stableJson, writeBundle } from "../src/bundle.js";

function tmp(): string {
  return mkdtempSync(join(tmpdir(), "bridge-"));
}

describe("bundle io", () => {
  it("round-trips tensors bit-exactly", () => {
    const dir = tmp();
    const a = Float32Array.from([1.5, -2.25, 3.125, 0.0, 7.75, -0.5]);
    writeBundle(dir, [{ name: "a", shape: [2, 3], data: a }], 3, "test");
    const loaded = readBundle(dir);
    expect(Array.from(loaded.get("a")!.data)).toEqual(Array.from(a));
    expect(loaded.get("a")!.shape).toEqual([2, 3]);
  });

  it("writes sequential byte offsets and little-endian payloads", () => {
    const dir = tmp();
    writeBundle(
      dir,
      [
        { name: "x", shape: [2], data: Float32Array.from([1, 2]) },
        { name: "y", shape: [1], data: Float32Array.from([3]) },
      ],
      2,
      "",
    );
    const manifest = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8"));
    expect(manifest.tensors[0].byte_offset).toBe(0);
    expect(manifest.tensors[1].byte_offset).toBe(8);
    const raw = readFileSync(join(dir, "tensors.bin"));
    expect(raw.length).toBe(12);
    expect(raw.readFloatLE(8)).toBe(3);
  });

  it("rejects shape/data mismatches", () => {
    expect(() =>
      writeBundle(tmp(), [{ name: "bad", shape: [4], data: Float32Array.from([1, 2]) }], 4, ""),
    ).toThrow(/do not fill/);
  });

  it("produces byte-identical files on rewrite", () => {
    const tensors = [{ name: "t", shape: [3], data: Float32Array.from([1, 2, 3]) }];
    const a = tmp();
    const b = tmp();
    writeBundle(a, tensors, 3, "same");
    writeBundle(b, tensors, 3, "same");
    expect(readFileSync(join(a, "manifest.json"), "utf-8")).toBe(
      readFileSync(join(b, "manifest.json"), "utf-8"),
    );
    expect(readFileSync(join(a, "tensors.bin"))).toEqual(readFileSync(join(b, "tensors.bin")));
  });

  it("stableJson sorts keys recursively", () => {
    expect(stableJson({ b: 1, a: { d: 2, c: 3 } })).toBe(
      '{\n  "a": {\n    "c": 3,\n    "d": 2\n  },\n  "b": 1\n}\n',
    );
  });
});
