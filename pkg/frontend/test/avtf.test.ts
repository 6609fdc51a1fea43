import { describe, expect, it } from "vitest";

import { AvtfFormatError, crc32, readAvtf, writeAvtf } from "../src/avtf.js";

describe("avtf container", () => {
  it("round-trips shape and payload exactly", () => {
    const data = new Float32Array([1.5, -2.25, 0.0, 3.125, 7, -0.5]);
    const buf = writeAvtf([2, 3], data);
    const back = readAvtf(buf);
    expect(back.shape).toEqual([2, 3]);
    expect(Array.from(back.data)).toEqual(Array.from(data));
  });

  it("writes the documented little-endian header", () => {
    const buf = writeAvtf([4], new Float32Array(4));
    expect(buf.toString("ascii", 0, 4)).toBe("AVTF");
    expect(buf.readUInt32LE(4)).toBe(1);     // version
    expect(buf.readUInt8(8)).toBe(1);        // dtype f32
    expect(buf.readUInt8(9)).toBe(1);        // rank
    expect(Number(buf.readBigUInt64LE(12))).toBe(4);
    expect(buf.length).toBe(12 + 8 + 16 + 4);
  });

  it("rejects rank zero", () => {
    expect(() => writeAvtf([], new Float32Array(1)))
      .toThrowError(AvtfFormatError);
  });

  it("detects payload corruption via the checksum", () => {
    const buf = writeAvtf([2, 2], new Float32Array([1, 2, 3, 4]));
    buf[buf.length - 8] ^= 0xff;
    expect(() => readAvtf(buf)).toThrowError(/checksum/);
  });

  it("detects truncation", () => {
    const buf = writeAvtf([2, 2], new Float32Array([1, 2, 3, 4]));
    expect(() => readAvtf(buf.subarray(0, buf.length - 6)))
      .toThrowError(AvtfFormatError);
  });

  it("crc32 matches the standard test vector", () => {
    expect(crc32(Buffer.from("123456789", "ascii"))).toBe(0xcbf43926);
  });
});
