/** STFT and log-mel spectrogram front end for the audio encoder. */

export interface MelConfig {
  sampleRate: number;   // Hz after resampling
  fftSize: number;      // power of two
  winLength: number;    // samples per analysis window
  hopLength: number;    // samples between windows
  melBands: number;
  fMin: number;
  fMax: number;
  logOffset: number;
}

export const DEFAULT_MEL: MelConfig = {
  sampleRate: 16000,
  fftSize: 512,
  winLength: 400,   // 25 ms
  hopLength: 160,   // 10 ms
  melBands: 64,
  fMin: 125,
  fMax: 7500,
  logOffset: 0.01,
};

export function hannWindow(n: number): Float32Array {
  const w = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    w[i] = 0.5 - 0.5 * Math.cos((2 * Math.PI * i) / (n - 1));
  }
  return w;
}

/** In-place iterative radix-2 FFT over interleaved re/im arrays. */
export function fft(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  if ((n & (n - 1)) !== 0) throw new Error("fft size must be a power of two");
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      [re[i], re[j]] = [re[j], re[i]];
      [im[i], im[j]] = [im[j], im[i]];
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const ang = (-2 * Math.PI) / len;
    const wRe = Math.cos(ang);
    const wIm = Math.sin(ang);
    for (let i = 0; i < n; i += len) {
      let curRe = 1;
      let curIm = 0;
      for (let k = 0; k < len / 2; k++) {
        const uRe = re[i + k];
        const uIm = im[i + k];
        const vRe = re[i + k + len / 2] * curRe - im[i + k + len / 2] * curIm;
        const vIm = re[i + k + len / 2] * curIm + im[i + k + len / 2] * curRe;
        re[i + k] = uRe + vRe;
        im[i + k] = uIm + vIm;
        re[i + k + len / 2] = uRe - vRe;
        im[i + k + len / 2] = uIm - vIm;
        const nextRe = curRe * wRe - curIm * wIm;
        curIm = curRe * wIm + curIm * wRe;
        curRe = nextRe;
      }
    }
  }
}

function hzToMel(f: number): number {
  return 1127.0 * Math.log(1.0 + f / 700.0);
}

/** Triangular mel filterbank matrix [melBands, fftSize/2 + 1]. */
export function melFilterbank(cfg: MelConfig): Float32Array {
  const bins = cfg.fftSize / 2 + 1;
  const fb = new Float32Array(cfg.melBands * bins);
  const melLo = hzToMel(cfg.fMin);
  const melHi = hzToMel(cfg.fMax);
  const edges: number[] = [];
  for (let m = 0; m < cfg.melBands + 2; m++) {
    edges.push(melLo + ((melHi - melLo) * m) / (cfg.melBands + 1));
  }
  for (let bin = 0; bin < bins; bin++) {
    const mel = hzToMel((bin * cfg.sampleRate) / cfg.fftSize);
    for (let m = 0; m < cfg.melBands; m++) {
      const lo = edges[m];
      const mid = edges[m + 1];
      const hi = edges[m + 2];
      let v = 0;
      if (mel > lo && mel < hi) {
        v = mel <= mid ? (mel - lo) / (mid - lo) : (hi - mel) / (hi - mid);
      }
      fb[m * bins + bin] = v;
    }
  }
  return fb;
}

/**
 * Log-mel patch for one audio segment: [frames, melBands] flattened
 * row-major. Frames beyond the available signal are zero.
 */
export function logMelPatch(samples: Float32Array, cfg: MelConfig,
                            frames: number): Float32Array {
  const window = hannWindow(cfg.winLength);
  const fb = melFilterbank(cfg);
  const bins = cfg.fftSize / 2 + 1;
  const out = new Float32Array(frames * cfg.melBands);
  const re = new Float64Array(cfg.fftSize);
  const im = new Float64Array(cfg.fftSize);
  for (let f = 0; f < frames; f++) {
    const start = f * cfg.hopLength;
    re.fill(0);
    im.fill(0);
    for (let i = 0; i < cfg.winLength; i++) {
      const s = start + i < samples.length ? samples[start + i] : 0;
      re[i] = s * window[i];
    }
    fft(re, im);
    for (let m = 0; m < cfg.melBands; m++) {
      let acc = 0;
      for (let bin = 0; bin < bins; bin++) {
        const mag = Math.sqrt(re[bin] * re[bin] + im[bin] * im[bin]);
        acc += fb[m * bins + bin] * mag;
      }
      out[f * cfg.melBands + m] = Math.log(acc + cfg.logOffset);
    }
  }
  return out;
}
