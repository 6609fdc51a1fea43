/** Dataset manifest JSON matching the recognizer's loader schema. */

import * as fs from "node:fs";
import * as path from "node:path";

export interface ManifestEntry {
  id: string;
  audio: string;
  visual: string;
  labels: number[];
  grounding?: number[];
  original_length?: number;
}

export interface Manifest {
  name: string;
  k: number;
  classes: string[];
  splits: Record<string, ManifestEntry[]>;
}

export function emptyManifest(name: string, classes: string[]): Manifest {
  return {
    name,
    k: classes.length,
    classes,
    splits: { train: [], test: [] },
  };
}

export function writeManifest(manifest: Manifest, file: string): void {
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, JSON.stringify(manifest, sortedKeys, 2) + "\n");
}

export function readManifest(file: string): Manifest {
  const doc = JSON.parse(fs.readFileSync(file, "utf-8")) as Manifest;
  if (typeof doc.k !== "number" || !Array.isArray(doc.classes) ||
      doc.classes.length !== doc.k || typeof doc.splits !== "object") {
    throw new Error(`invalid manifest ${file}`);
  }
  return doc;
}

function sortedKeys(_key: string, value: unknown): unknown {
  if (value && typeof value === "object" && !Array.isArray(value)) {
    return Object.fromEntries(
      Object.entries(value as Record<string, unknown>).sort(([a], [b]) =>
        a < b ? -1 : a > b ? 1 : 0));
  }
  return value;
}
