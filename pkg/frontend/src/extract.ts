/**
 * Clip extraction: WAV audio plus PPM frames -> per-segment feature
 * tensors in the binary container, padded or truncated to a fixed number
 * of one-second segments.
 *
 * A clip is a directory holding one `*.wav` file and zero or more
 * `*.ppm` frames (sorted by filename, distributed evenly over segments).
 * Clips without frames get all-zero visual features, which downstream
 * validation accepts as a silent/static stream.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { writeAvtf } from "./avtf.js";
import {
  AUDIO_DIM, AudioEncoder, meanFrames, VISUAL_DIM, VISUAL_GRID, VisualEncoder,
} from "./encoders.js";
import { ManifestEntry } from "./manifest.js";
import { parsePpm } from "./ppm.js";
import { MediaDecodeError, parseWav, resample } from "./wav.js";

export interface ExtractionJob {
  clipDir: string;
  clipId: string;
  outDir: string;
  segments: number;         // fixed T after padding/truncation
  segmentSeconds: number;
  framesPerSegment: number;
  labels?: number[];
}

export const DEFAULT_SEGMENTS = 10;
export const DEFAULT_FRAMES_PER_SEGMENT = 8;

export interface ExtractionResult {
  entry: ManifestEntry;
  audioShape: number[];
  visualShape: number[];
}

export class ExtractionError extends Error {
  constructor(public clipId: string, message: string) {
    super(`clip ${clipId}: ${message}`);
  }
}

function findMedia(dir: string): { wav: string; frames: string[] } {
  let names: string[];
  try {
    names = fs.readdirSync(dir);
  } catch (err) {
    throw new Error(`cannot read clip directory ${dir}: ${err}`);
  }
  const wavs = names.filter((n) => n.toLowerCase().endsWith(".wav")).sort();
  const frames = names.filter((n) => n.toLowerCase().endsWith(".ppm")).sort();
  if (wavs.length === 0) throw new Error("no .wav file in clip directory");
  return { wav: path.join(dir, wavs[0]), frames: frames.map((f) => path.join(dir, f)) };
}

export function extractClip(job: ExtractionJob,
                            audioEnc = new AudioEncoder(),
                            visualEnc = new VisualEncoder()): ExtractionResult {
  const { clipId } = job;
  let media;
  try {
    media = findMedia(job.clipDir);
  } catch (err) {
    throw new ExtractionError(clipId, String(err instanceof Error ? err.message : err));
  }

  let wav;
  try {
    wav = parseWav(fs.readFileSync(media.wav));
  } catch (err) {
    if (err instanceof MediaDecodeError) {
      throw new ExtractionError(clipId, err.message);
    }
    throw new ExtractionError(clipId, `cannot read ${media.wav}: ${err}`);
  }
  const rate = audioEnc.mel.sampleRate;
  const samples = resample(wav.samples, wav.sampleRate, rate);
  const durationSeconds = samples.length / rate;
  if (durationSeconds < 1.0) {
    throw new ExtractionError(clipId, "audio shorter than one segment");
  }
  const naturalSegments = Math.floor(durationSeconds / job.segmentSeconds);
  const originalLength = Math.max(1, naturalSegments);
  const t = job.segments;

  // audio: one embedding per segment; missing segments stay zero (padding)
  const audio = new Float32Array(t * AUDIO_DIM);
  const segSamples = Math.round(job.segmentSeconds * rate);
  for (let s = 0; s < Math.min(t, originalLength); s++) {
    const seg = samples.subarray(s * segSamples, (s + 1) * segSamples);
    const emb = audioEnc.embedSegment(seg);
    audio.set(emb, s * AUDIO_DIM);
  }

  // visual: frames assigned to their segment by order, temporally averaged
  const cells = VISUAL_GRID * VISUAL_GRID * VISUAL_DIM;
  const visual = new Float32Array(t * cells);
  if (media.frames.length > 0) {
    const perSegment: Float32Array[][] = Array.from({ length: t }, () => []);
    const framesTotal = media.frames.length;
    for (let i = 0; i < framesTotal; i++) {
      const seg = Math.min(
        originalLength - 1,
        Math.floor((i * originalLength) / framesTotal));
      if (seg >= t) continue;  // truncated tail
      if (perSegment[seg].length >= job.framesPerSegment) continue;
      let img;
      try {
        img = parsePpm(fs.readFileSync(media.frames[i]));
      } catch (err) {
        if (err instanceof MediaDecodeError) {
          throw new ExtractionError(clipId, `${media.frames[i]}: ${err.message}`);
        }
        throw err;
      }
      perSegment[seg].push(visualEnc.encodeFrame(img));
    }
    for (let s = 0; s < t; s++) {
      if (perSegment[s].length > 0) {
        visual.set(meanFrames(perSegment[s], cells), s * cells);
      }
    }
  }

  for (const arr of [audio, visual]) {
    for (let i = 0; i < arr.length; i++) {
      if (!Number.isFinite(arr[i])) {
        throw new ExtractionError(clipId, "non-finite feature value");
      }
    }
  }

  fs.mkdirSync(path.join(job.outDir, "features"), { recursive: true });
  const audioRel = path.posix.join("features", `${clipId}_audio.avtf`);
  const visualRel = path.posix.join("features", `${clipId}_visual.avtf`);
  fs.writeFileSync(path.join(job.outDir, audioRel),
                   writeAvtf([t, AUDIO_DIM], audio));
  fs.writeFileSync(path.join(job.outDir, visualRel),
                   writeAvtf([t, VISUAL_GRID, VISUAL_GRID, VISUAL_DIM], visual));

  return {
    entry: {
      id: clipId,
      audio: audioRel,
      visual: visualRel,
      labels: job.labels ?? [1],
      original_length: originalLength,
    },
    audioShape: [t, AUDIO_DIM],
    visualShape: [t, VISUAL_GRID, VISUAL_GRID, VISUAL_DIM],
  };
}
