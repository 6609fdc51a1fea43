#!/usr/bin/env node
/**
 * Batch extraction: every subdirectory of --in is one clip (a .wav file
 * plus optional .ppm frames). Writes feature files and a manifest that the
 * recognizer's loader accepts. Failing clips are reported and skipped; the
 * job continues.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { AudioEncoder, VisualEncoder } from "./encoders.js";
import {
  DEFAULT_FRAMES_PER_SEGMENT, DEFAULT_SEGMENTS, extractClip, ExtractionError,
} from "./extract.js";
import { emptyManifest, writeManifest } from "./manifest.js";

interface Args {
  inDir: string;
  outDir: string;
  manifest: string;
  segments: number;
  framesPerSegment: number;
  split: string;
  seed: number;
}

function parseArgs(argv: string[]): Args {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key?.startsWith("--") || value === undefined) {
      throw new Error(`bad argument pair near ${key ?? "(end)"}`);
    }
    args[key.slice(2)] = value;
  }
  for (const required of ["in", "out", "manifest"]) {
    if (!(required in args)) throw new Error(`missing --${required}`);
  }
  return {
    inDir: args["in"],
    outDir: args["out"],
    manifest: args["manifest"],
    segments: args["segments"] ? parseInt(args["segments"], 10) : DEFAULT_SEGMENTS,
    framesPerSegment: args["frames"]
      ? parseInt(args["frames"], 10) : DEFAULT_FRAMES_PER_SEGMENT,
    split: args["split"] ?? "train",
    seed: args["seed"] ? parseInt(args["seed"], 10) : 7,
  };
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(JSON.stringify({ error: "config",
      message: err instanceof Error ? err.message : String(err) }));
    return 2;
  }

  let clipDirs: string[];
  try {
    clipDirs = fs.readdirSync(args.inDir)
      .map((n) => path.join(args.inDir, n))
      .filter((p) => fs.statSync(p).isDirectory())
      .sort();
  } catch (err) {
    console.error(JSON.stringify({ error: "data",
      message: `cannot read --in directory: ${err}` }));
    return 3;
  }
  if (clipDirs.length === 0) {
    console.error(JSON.stringify({ error: "data",
      message: "no clip directories under --in" }));
    return 3;
  }

  const audioEnc = new AudioEncoder(args.seed);
  const visualEnc = new VisualEncoder(args.seed);
  const manifest = emptyManifest("extracted", ["event_00"]);
  manifest.splits[args.split] = manifest.splits[args.split] ?? [];

  let failures = 0;
  for (const dir of clipDirs) {
    const clipId = path.basename(dir);
    try {
      const result = extractClip({
        clipDir: dir, clipId, outDir: args.outDir,
        segments: args.segments, segmentSeconds: 1,
        framesPerSegment: args.framesPerSegment,
      }, audioEnc, visualEnc);
      manifest.splits[args.split].push(result.entry);
      console.log(`${clipId}: audio ${result.audioShape.join("x")} `
        + `visual ${result.visualShape.join("x")}`);
    } catch (err) {
      failures += 1;
      const message = err instanceof ExtractionError
        ? err.message : `clip ${clipId}: ${err}`;
      console.error(JSON.stringify({ error: "extraction", message }));
    }
  }

  if (manifest.splits[args.split].length === 0) {
    console.error(JSON.stringify({ error: "data",
      message: "every clip failed extraction" }));
    return 3;
  }
  writeManifest(manifest, args.manifest);
  console.log(`wrote ${manifest.splits[args.split].length} clips `
    + `(${failures} failed) -> ${args.manifest}`);
  return 0;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("cli.ts")) {
  process.exit(main(process.argv.slice(2)));
}
