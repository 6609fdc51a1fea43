/**
 * Frozen per-segment feature encoders.
 *
 * The audio encoder embeds each one-second segment: log-mel spectrogram
 * (96 frames x 64 bands) through a small strided conv stack to a 128-d
 * vector. The visual encoder maps a 224x224 RGB frame to a 7x7 grid of
 * 2048-d features through strided convs and a 1x1 channel projection.
 *
 * Weights are deterministic functions of a seed (no pretrained weights are
 * bundled); the shapes and the whole extraction pipeline match what the
 * recognizer's data loader expects.
 */

import { conv2d, makeConvLayer, ConvLayer } from "./conv.js";
import { DEFAULT_MEL, logMelPatch, MelConfig } from "./dsp.js";
import { initWeights } from "./prng.js";
import { resizeBilinear, RgbImage } from "./ppm.js";

export const AUDIO_DIM = 128;
export const VISUAL_GRID = 7;
export const VISUAL_DIM = 2048;
export const MEL_FRAMES = 96;

export class AudioEncoder {
  private layers: ConvLayer[];
  private head: Float32Array;  // [poolC, AUDIO_DIM]
  private poolC: number;
  readonly mel: MelConfig;

  constructor(seed = 7, mel: MelConfig = DEFAULT_MEL) {
    this.mel = mel;
    this.layers = [
      makeConvLayer(seed * 1009 + 1, 3, 2, 1, 8),
      makeConvLayer(seed * 1009 + 2, 3, 2, 8, 16),
      makeConvLayer(seed * 1009 + 3, 3, 2, 16, 32),
    ];
    this.poolC = 32;
    this.head = initWeights(seed * 1009 + 4, this.poolC * AUDIO_DIM, this.poolC);
  }

  /** One 1-second segment of 16 kHz samples -> 128-d embedding. */
  embedSegment(samples: Float32Array): Float32Array {
    const patch = logMelPatch(samples, this.mel, MEL_FRAMES);
    let cur = { data: patch, h: MEL_FRAMES, w: this.mel.melBands };
    for (const layer of this.layers) {
      cur = conv2d(cur.data, cur.h, cur.w, layer, true);
    }
    // global average pool over the grid, then a linear head
    const pooled = new Float32Array(this.poolC);
    const cells = cur.h * cur.w;
    for (let i = 0; i < cells; i++) {
      for (let c = 0; c < this.poolC; c++) pooled[c] += cur.data[i * this.poolC + c];
    }
    for (let c = 0; c < this.poolC; c++) pooled[c] /= cells;
    const out = new Float32Array(AUDIO_DIM);
    for (let c = 0; c < this.poolC; c++) {
      const v = pooled[c];
      if (v === 0) continue;
      for (let d = 0; d < AUDIO_DIM; d++) out[d] += v * this.head[c * AUDIO_DIM + d];
    }
    return out;
  }
}

export class VisualEncoder {
  private layers: ConvLayer[];
  private projection: ConvLayer;

  constructor(seed = 11) {
    this.layers = [
      makeConvLayer(seed * 2003 + 1, 3, 4, 3, 16),    // 224 -> 56
      makeConvLayer(seed * 2003 + 2, 3, 2, 16, 32),   // 56 -> 28
      makeConvLayer(seed * 2003 + 3, 3, 2, 32, 64),   // 28 -> 14
      makeConvLayer(seed * 2003 + 4, 3, 2, 64, 128),  // 14 -> 7
    ];
    this.projection = makeConvLayer(seed * 2003 + 5, 1, 1, 128, VISUAL_DIM);
  }

  /** One RGB frame -> [7, 7, 2048] features (flat row-major). */
  encodeFrame(img: RgbImage): Float32Array {
    const resized = resizeBilinear(img, 224, 224);
    let cur = { data: resized, h: 224, w: 224 };
    for (const layer of this.layers) {
      cur = conv2d(cur.data, cur.h, cur.w, layer, true);
    }
    if (cur.h !== VISUAL_GRID || cur.w !== VISUAL_GRID) {
      throw new Error(`unexpected grid ${cur.h}x${cur.w}`);
    }
    const projected = conv2d(cur.data, cur.h, cur.w, this.projection, false);
    return projected.data;
  }
}

/** Mean over frames of per-frame feature grids (temporal pooling). */
export function meanFrames(frames: Float32Array[], size: number): Float32Array {
  const out = new Float32Array(size);
  if (frames.length === 0) return out;
  for (const f of frames) {
    for (let i = 0; i < size; i++) out[i] += f[i];
  }
  for (let i = 0; i < size; i++) out[i] /= frames.length;
  return out;
}
