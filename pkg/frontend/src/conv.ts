/** Strided 2-D convolution blocks for the deterministic encoders. */

import { initWeights } from "./prng.js";

export interface ConvLayer {
  k: number;
  stride: number;
  cIn: number;
  cOut: number;
  weights: Float32Array; // [k, k, cIn, cOut]
  bias: Float32Array;
}

export function makeConvLayer(seed: number, k: number, stride: number,
                              cIn: number, cOut: number): ConvLayer {
  return {
    k, stride, cIn, cOut,
    weights: initWeights(seed, k * k * cIn * cOut, k * k * cIn),
    bias: new Float32Array(cOut),
  };
}

/**
 * Valid-start strided cross-correlation with zero padding (k-1)/2, ReLU
 * optional. Input/output are HWC row-major.
 */
export function conv2d(input: Float32Array, h: number, w: number,
                       layer: ConvLayer, relu: boolean): { data: Float32Array; h: number; w: number } {
  const pad = (layer.k - 1) >> 1;
  const oh = Math.floor((h - 1) / layer.stride) + 1;
  const ow = Math.floor((w - 1) / layer.stride) + 1;
  const out = new Float32Array(oh * ow * layer.cOut);
  const { k, cIn, cOut, weights, bias } = layer;
  for (let oy = 0; oy < oh; oy++) {
    const iy0 = oy * layer.stride - pad;
    for (let ox = 0; ox < ow; ox++) {
      const ix0 = ox * layer.stride - pad;
      const outBase = (oy * ow + ox) * cOut;
      for (let co = 0; co < cOut; co++) out[outBase + co] = bias[co];
      for (let dy = 0; dy < k; dy++) {
        const iy = iy0 + dy;
        if (iy < 0 || iy >= h) continue;
        for (let dx = 0; dx < k; dx++) {
          const ix = ix0 + dx;
          if (ix < 0 || ix >= w) continue;
          const inBase = (iy * w + ix) * cIn;
          const wBase = (dy * k + dx) * cIn * cOut;
          for (let ci = 0; ci < cIn; ci++) {
            const v = input[inBase + ci];
            if (v === 0) continue;
            const wRow = wBase + ci * cOut;
            for (let co = 0; co < cOut; co++) {
              out[outBase + co] += v * weights[wRow + co];
            }
          }
        }
      }
      if (relu) {
        for (let co = 0; co < cOut; co++) {
          if (out[outBase + co] < 0) out[outBase + co] = 0;
        }
      }
    }
  }
  return { data: out, h: oh, w: ow };
}
