/**
 * Deterministic PRNG (sfc32) plus a Box-Muller gaussian, used to
 * initialize the encoder weights reproducibly from a seed.
 */

export type Rng = () => number;

export function sfc32(seed: number): Rng {
  let a = 0x9e3779b9 ^ seed;
  let b = 0x243f6a88 + seed;
  let c = 0xb7e15162 ^ (seed << 13);
  let d = seed >>> 0 || 1;
  return () => {
    a >>>= 0; b >>>= 0; c >>>= 0; d >>>= 0;
    let t = (a + b) | 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) | 0;
    c = (c << 21) | (c >>> 11);
    d = (d + 1) | 0;
    t = (t + d) | 0;
    c = (c + t) | 0;
    return (t >>> 0) / 4294967296;
  };
}

/** Standard normal samples; uniform draws come from the supplied rng. */
export function gaussian(rng: Rng): () => number {
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const v = spare;
      spare = null;
      return v;
    }
    let u = 0;
    let v = 0;
    do {
      u = rng();
    } while (u <= 1e-12);
    v = rng();
    const r = Math.sqrt(-2.0 * Math.log(u));
    spare = r * Math.sin(2 * Math.PI * v);
    return r * Math.cos(2 * Math.PI * v);
  };
}

/** He-style scaled weight tensor as a flat Float32Array. */
export function initWeights(seed: number, count: number, fanIn: number): Float32Array {
  const g = gaussian(sfc32(seed));
  const scale = Math.sqrt(2.0 / fanIn);
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = g() * scale;
  return out;
}
