/** Binary PPM (P6) frame reader and bilinear RGB resizing. */

import { MediaDecodeError } from "./wav.js";

export interface RgbImage {
  width: number;
  height: number;
  /** Interleaved RGB in [0, 1], row-major. */
  pixels: Float32Array;
}

export function parsePpm(buf: Buffer): RgbImage {
  // header: "P6" <ws> width <ws> height <ws> maxval <single ws> raster
  if (buf.length < 2 || buf.toString("ascii", 0, 2) !== "P6") {
    throw new MediaDecodeError("not a binary PPM (P6) image");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < buf.length && isSpace(buf[pos])) pos++;
    if (pos < buf.length && buf[pos] === 0x23) { // '#' comment
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < buf.length && !isSpace(buf[pos])) pos++;
    if (start === pos) throw new MediaDecodeError("malformed PPM header");
    fields.push(parseInt(buf.toString("ascii", start, pos), 10));
  }
  pos++; // single whitespace before raster
  const [width, height, maxval] = fields;
  if (!(width > 0 && height > 0) || !(maxval > 0 && maxval < 65536)) {
    throw new MediaDecodeError("invalid PPM dimensions");
  }
  if (maxval > 255) throw new MediaDecodeError("16-bit PPM not supported");
  const need = width * height * 3;
  if (buf.length - pos < need) throw new MediaDecodeError("truncated PPM raster");
  const pixels = new Float32Array(need);
  for (let i = 0; i < need; i++) pixels[i] = buf[pos + i] / maxval;
  return { width, height, pixels };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}

export function resizeBilinear(img: RgbImage, outH: number, outW: number): Float32Array {
  const out = new Float32Array(outH * outW * 3);
  const sy = outH > 1 ? (img.height - 1) / (outH - 1) : 0;
  const sx = outW > 1 ? (img.width - 1) / (outW - 1) : 0;
  for (let y = 0; y < outH; y++) {
    const fy = y * sy;
    const y0 = Math.floor(fy);
    const y1 = Math.min(y0 + 1, img.height - 1);
    const wy = fy - y0;
    for (let x = 0; x < outW; x++) {
      const fx = x * sx;
      const x0 = Math.floor(fx);
      const x1 = Math.min(x0 + 1, img.width - 1);
      const wx = fx - x0;
      for (let c = 0; c < 3; c++) {
        const p00 = img.pixels[(y0 * img.width + x0) * 3 + c];
        const p01 = img.pixels[(y0 * img.width + x1) * 3 + c];
        const p10 = img.pixels[(y1 * img.width + x0) * 3 + c];
        const p11 = img.pixels[(y1 * img.width + x1) * 3 + c];
        const top = p00 * (1 - wx) + p01 * wx;
        const bot = p10 * (1 - wx) + p11 * wx;
        out[(y * outW + x) * 3 + c] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}
