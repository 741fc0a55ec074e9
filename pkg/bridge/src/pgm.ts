/** Binary 8-bit PGM (P5) reading and writing.
 *
 * The rendering pipeline stores every view image as `P5\n{W} {H}\n255\n`
 * followed by H rows of W raw bytes. The reader tolerates any whitespace
 * between header fields and `#` comment lines, as the format allows.
 */

import { readFileSync, writeFileSync } from "node:fs";

export interface GrayImage {
  /** rows */
  height: number;
  /** columns */
  width: number;
  /** row-major intensities in [0, 1] */
  pixels: Float64Array;
}

export class DataError extends Error {}

function isSpace(byte: number): boolean {
  // space, \t, \n, \v, \f, \r
  return byte === 0x20 || (byte >= 0x09 && byte <= 0x0d);
}

export function decodePgm(data: Buffer, label = "pgm"): GrayImage {
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x35) {
    throw new DataError(`${label}: not a binary PGM (P5) file`);
  }
  const fields: number[] = [];
  let pos = 2;
  while (fields.length < 3) {
    while (pos < data.length && isSpace(data[pos])) pos += 1;
    if (pos >= data.length) throw new DataError(`${label}: truncated header`);
    if (data[pos] === 0x23) {
      // '#' comment runs to end of line
      while (pos < data.length && data[pos] !== 0x0a) pos += 1;
      continue;
    }
    const start = pos;
    while (pos < data.length && !isSpace(data[pos])) pos += 1;
    const field = Number(data.subarray(start, pos).toString("ascii"));
    if (!Number.isInteger(field) || field < 0) {
      throw new DataError(`${label}: malformed header field`);
    }
    fields.push(field);
  }
  pos += 1; // single whitespace byte after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) {
    throw new DataError(`${label}: only 8-bit PGM is supported (maxval 255)`);
  }
  if (width < 1 || height < 1) {
    throw new DataError(`${label}: empty image`);
  }
  if (data.length - pos < width * height) {
    throw new DataError(`${label}: pixel payload is truncated`);
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = data[pos + i] / 255.0;
  }
  return { height, width, pixels };
}

export function readPgm(path: string): GrayImage {
  let data: Buffer;
  try {
    data = readFileSync(path);
  } catch {
    throw new DataError(`no image at ${path}`);
  }
  return decodePgm(data, path);
}

export function writePgm(path: string, image: GrayImage): void {
  const { height, width, pixels } = image;
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, "ascii");
  const body = Buffer.alloc(width * height);
  for (let i = 0; i < pixels.length; i++) {
    const clipped = Math.min(1, Math.max(0, pixels[i]));
    body[i] = Math.round(clipped * 255);
  }
  writeFileSync(path, Buffer.concat([header, body]));
}
