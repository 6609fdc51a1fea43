/** Minimal RIFF/WAVE reader: PCM16 and float32, any channel count. */

export interface WavData {
  sampleRate: number;
  /** Mono samples in [-1, 1] (channels averaged). */
  samples: Float32Array;
}

export class MediaDecodeError extends Error {}

export function parseWav(buf: Buffer): WavData {
  if (buf.length < 44 || buf.toString("ascii", 0, 4) !== "RIFF" ||
      buf.toString("ascii", 8, 12) !== "WAVE") {
    throw new MediaDecodeError("not a RIFF/WAVE file");
  }
  let offset = 12;
  let format = 0;
  let channels = 0;
  let sampleRate = 0;
  let bitsPerSample = 0;
  let data: Buffer | null = null;
  while (offset + 8 <= buf.length) {
    const id = buf.toString("ascii", offset, offset + 4);
    const size = buf.readUInt32LE(offset + 4);
    const body = offset + 8;
    if (id === "fmt ") {
      if (size < 16) throw new MediaDecodeError("fmt chunk too small");
      format = buf.readUInt16LE(body);
      channels = buf.readUInt16LE(body + 2);
      sampleRate = buf.readUInt32LE(body + 4);
      bitsPerSample = buf.readUInt16LE(body + 14);
    } else if (id === "data") {
      data = buf.subarray(body, body + size);
    }
    offset = body + size + (size % 2);
  }
  if (!data || channels < 1 || sampleRate < 1) {
    throw new MediaDecodeError("missing fmt or data chunk");
  }
  if (data.length === 0) {
    throw new MediaDecodeError("zero-length audio");
  }

  let frames: number;
  let read: (frame: number, ch: number) => number;
  if (format === 1 && bitsPerSample === 16) {
    frames = Math.floor(data.length / (2 * channels));
    read = (f, ch) => data!.readInt16LE((f * channels + ch) * 2) / 32768;
  } else if (format === 3 && bitsPerSample === 32) {
    frames = Math.floor(data.length / (4 * channels));
    read = (f, ch) => data!.readFloatLE((f * channels + ch) * 4);
  } else {
    throw new MediaDecodeError(
      `unsupported WAV encoding (format=${format}, bits=${bitsPerSample})`);
  }
  if (frames === 0) throw new MediaDecodeError("zero-length audio");

  const samples = new Float32Array(frames);
  for (let f = 0; f < frames; f++) {
    let acc = 0;
    for (let ch = 0; ch < channels; ch++) acc += read(f, ch);
    samples[f] = acc / channels;
  }
  return { sampleRate, samples };
}

/** Linear resampling to a target rate. */
export function resample(samples: Float32Array, from: number, to: number): Float32Array {
  if (from === to) return samples;
  const n = Math.max(1, Math.round((samples.length * to) / from));
  const out = new Float32Array(n);
  const scale = (samples.length - 1) / Math.max(1, n - 1);
  for (let i = 0; i < n; i++) {
    const x = i * scale;
    const x0 = Math.floor(x);
    const x1 = Math.min(x0 + 1, samples.length - 1);
    const f = x - x0;
    out[i] = samples[x0] * (1 - f) + samples[x1] * f;
  }
  return out;
}
