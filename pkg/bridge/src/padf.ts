/** The PADF feature-file format.
 *
 * Layout (all little-endian):
 *   bytes 0..3    magic "PADF"
 *   bytes 4..7    version, u32, currently 1
 *   bytes 8..19   h, w, d as u32
 *   then h*w*d float32 values (the feature grid, row-major, d fastest)
 *   then d float32 values (the global feature vector)
 *
 * Exactly this many bytes; trailing data is an error. Prompt vector files
 * are the same format with h = w = 1 and the vector stored as both grid
 * and global.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

import { DataError } from "./pgm.js";

export const MAGIC = "PADF";
export const VERSION = 1;
const HEADER_BYTES = 20;

export interface FeatureFile {
  h: number;
  w: number;
  d: number;
  /** h*w*d float32 values, d fastest */
  grid: Float32Array;
  /** d float32 values */
  global: Float32Array;
}

export function encodePadf(f: FeatureFile): Buffer {
  const { h, w, d, grid, global } = f;
  if (h < 1 || w < 1 || d < 1) {
    throw new DataError(`invalid dimensions (${h}, ${w}, ${d})`);
  }
  if (grid.length !== h * w * d) {
    throw new DataError(`grid has ${grid.length} values, expected ${h * w * d}`);
  }
  if (global.length !== d) {
    throw new DataError(`global vector has ${global.length} values, expected ${d}`);
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * (grid.length + global.length));
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt32LE(h, 8);
  buf.writeUInt32LE(w, 12);
  buf.writeUInt32LE(d, 16);
  let off = HEADER_BYTES;
  for (let i = 0; i < grid.length; i++, off += 4) buf.writeFloatLE(grid[i], off);
  for (let i = 0; i < global.length; i++, off += 4) buf.writeFloatLE(global[i], off);
  return buf;
}

export function writePadf(path: string, f: FeatureFile): void {
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, encodePadf(f));
}

export function readPadf(path: string): FeatureFile {
  let data: Buffer;
  try {
    data = readFileSync(path);
  } catch {
    throw new DataError(`no feature file at ${path}`);
  }
  if (data.length < HEADER_BYTES) throw new DataError(`${path}: truncated header`);
  if (data.subarray(0, 4).toString("ascii") !== MAGIC) {
    throw new DataError(`${path}: bad magic`);
  }
  const version = data.readUInt32LE(4);
  if (version !== VERSION) {
    throw new DataError(`${path}: unsupported version ${version}`);
  }
  const h = data.readUInt32LE(8);
  const w = data.readUInt32LE(12);
  const d = data.readUInt32LE(16);
  if (h < 1 || w < 1 || d < 1) {
    throw new DataError(`${path}: invalid dimensions (${h}, ${w}, ${d})`);
  }
  const expected = HEADER_BYTES + 4 * (h * w * d + d);
  if (data.length < expected) throw new DataError(`${path}: truncated payload`);
  if (data.length > expected) throw new DataError(`${path}: trailing bytes after payload`);
  const grid = new Float32Array(h * w * d);
  const global = new Float32Array(d);
  let off = HEADER_BYTES;
  for (let i = 0; i < grid.length; i++, off += 4) grid[i] = data.readFloatLE(off);
  for (let i = 0; i < global.length; i++, off += 4) global[i] = data.readFloatLE(off);
  return { h, w, d, grid, global };
}
