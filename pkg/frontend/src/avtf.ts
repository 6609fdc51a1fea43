/**
 * The binary tensor container consumed by the recognizer's data loader:
 * "AVTF" magic | version u32 | dtype u8 (1 = f32) | rank u8 | reserved u16 |
 * extents rank*u64 | row-major f32 payload | CRC32 of the payload.
 * All little-endian.
 */

const MAGIC = "AVTF";
const VERSION = 1;
const DTYPE_F32 = 1;

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export class AvtfFormatError extends Error {
  constructor(public kind: string, message: string) {
    super(message);
  }
}

export function writeAvtf(shape: number[], data: Float32Array): Buffer {
  if (shape.length === 0) {
    throw new AvtfFormatError("bad_rank", "rank-0 tensors cannot be serialized");
  }
  const count = shape.reduce((a, b) => a * b, 1);
  if (shape.some((e) => e < 1)) {
    throw new AvtfFormatError("extent_overflow", `extents must be positive: ${shape}`);
  }
  if (count !== data.length) {
    throw new AvtfFormatError("truncated",
      `shape ${shape} implies ${count} elements, got ${data.length}`);
  }
  const header = Buffer.alloc(12 + 8 * shape.length);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt8(DTYPE_F32, 8);
  header.writeUInt8(shape.length, 9);
  header.writeUInt16LE(0, 10);
  shape.forEach((e, i) => header.writeBigUInt64LE(BigInt(e), 12 + 8 * i));

  const payload = Buffer.alloc(4 * data.length);
  for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], 4 * i);

  const trailer = Buffer.alloc(4);
  trailer.writeUInt32LE(crc32(payload), 0);
  return Buffer.concat([header, payload, trailer]);
}

export interface AvtfTensor {
  shape: number[];
  data: Float32Array;
}

export function readAvtf(buf: Buffer): AvtfTensor {
  if (buf.length < 12) throw new AvtfFormatError("truncated", "short header");
  if (buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new AvtfFormatError("bad_magic", "wrong magic");
  }
  if (buf.readUInt32LE(4) !== VERSION) {
    throw new AvtfFormatError("bad_version", "unsupported version");
  }
  if (buf.readUInt8(8) !== DTYPE_F32) {
    throw new AvtfFormatError("bad_dtype", "unsupported dtype");
  }
  const rank = buf.readUInt8(9);
  if (rank < 1 || rank > 8) throw new AvtfFormatError("bad_rank", `rank ${rank}`);
  if (buf.length < 12 + 8 * rank) {
    throw new AvtfFormatError("truncated", "file ends inside extents");
  }
  const shape: number[] = [];
  let count = 1;
  for (let i = 0; i < rank; i++) {
    const e = Number(buf.readBigUInt64LE(12 + 8 * i));
    if (e < 1 || e > 2 ** 48) {
      throw new AvtfFormatError("extent_overflow", `extent ${e}`);
    }
    shape.push(e);
    count *= e;
    if (count > 2 ** 34) {
      throw new AvtfFormatError("extent_overflow", "element count too large");
    }
  }
  const body = 12 + 8 * rank;
  if (buf.length < body + 4 * count + 4) {
    throw new AvtfFormatError("truncated", "payload shorter than extents imply");
  }
  const payload = buf.subarray(body, body + 4 * count);
  const stored = buf.readUInt32LE(body + 4 * count);
  if (stored !== crc32(payload)) {
    throw new AvtfFormatError("checksum", "payload checksum mismatch");
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = payload.readFloatLE(4 * i);
  return { shape, data };
}
