/** Feature backbones: a rendered view image in, an h x w x d grid of unit
 * feature vectors plus one d-dim global vector out.
 *
 * The built-in "patch-stats" backbone is fully local and deterministic: it
 * summarizes every image cell with nine intensity statistics and pushes
 * them through a seeded random projection, then normalizes. The global
 * vector is the normalized mean of the cell vectors. Two images differing
 * in any cell statistic get different features; re-running with the same
 * seed reproduces every byte. Real learned encoders can slot in behind the
 * same interface, as long as they keep d consistent across a run.
 */

import { GrayImage, DataError } from "./pgm.js";
import { combineSeeds, fnv1a32, mulberry32 } from "./rng.js";

export interface ViewFeatures {
  /** h*w*d float32 values, d fastest */
  grid: Float32Array;
  /** d float32 values, unit norm */
  global: Float32Array;
}

export interface Backbone {
  readonly name: string;
  readonly dim: number;
  encode(image: GrayImage, h: number, w: number): ViewFeatures;
}

const STAT_COUNT = 9;

/** Nine statistics of one ph x pw cell: mean, std, mean |dx|, mean |dy|,
 * min, max, intensity centroid offsets (rows, columns, each in [-1, 1]),
 * and a constant bias so empty cells still map to a fixed direction. */
function cellStats(
  image: GrayImage,
  r0: number,
  c0: number,
  ph: number,
  pw: number,
  out: Float64Array,
): void {
  const { width, pixels } = image;
  let sum = 0;
  let sumSq = 0;
  let min = Infinity;
  let max = -Infinity;
  let dxSum = 0;
  let dySum = 0;
  let massR = 0;
  let massC = 0;
  for (let r = 0; r < ph; r++) {
    const row = (r0 + r) * width + c0;
    for (let c = 0; c < pw; c++) {
      const x = pixels[row + c];
      sum += x;
      sumSq += x * x;
      if (x < min) min = x;
      if (x > max) max = x;
      if (c + 1 < pw) dxSum += Math.abs(pixels[row + c + 1] - x);
      if (r + 1 < ph) dySum += Math.abs(pixels[row + width + c] - x);
      massR += x * r;
      massC += x * c;
    }
  }
  const count = ph * pw;
  const mean = sum / count;
  const variance = Math.max(0, sumSq / count - mean * mean);
  out[0] = mean;
  out[1] = Math.sqrt(variance);
  out[2] = pw > 1 ? dxSum / (ph * (pw - 1)) : 0;
  out[3] = ph > 1 ? dySum / ((ph - 1) * pw) : 0;
  out[4] = min;
  out[5] = max;
  // centroid offsets from the cell center, scaled into [-1, 1]
  out[6] = sum > 0 && ph > 1 ? (massR / sum - (ph - 1) / 2) / ((ph - 1) / 2) : 0;
  out[7] = sum > 0 && pw > 1 ? (massC / sum - (pw - 1) / 2) / ((pw - 1) / 2) : 0;
  out[8] = 1;
}

class PatchStatsBackbone implements Backbone {
  readonly name = "patch-stats";
  readonly dim: number;
  private readonly projection: Float64Array; // dim x STAT_COUNT

  constructor(dim: number, seed: number) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new DataError(`feature dimension must be a positive integer, got ${dim}`);
    }
    this.dim = dim;
    const next = mulberry32(combineSeeds(seed, fnv1a32(this.name)));
    this.projection = new Float64Array(dim * STAT_COUNT);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = 2 * next() - 1;
    }
  }

  encode(image: GrayImage, h: number, w: number): ViewFeatures {
    if (h < 1 || w < 1 || image.height % h !== 0 || image.width % w !== 0) {
      throw new DataError(
        `image size ${image.height}x${image.width} is not divisible by grid ${h}x${w}`,
      );
    }
    const d = this.dim;
    const ph = image.height / h;
    const pw = image.width / w;
    const grid = new Float32Array(h * w * d);
    const mean = new Float64Array(d);
    const stats = new Float64Array(STAT_COUNT);
    const cell = new Float64Array(d);
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < w; j++) {
        cellStats(image, i * ph, j * pw, ph, pw, stats);
        let norm2 = 0;
        for (let k = 0; k < d; k++) {
          let acc = 0;
          const row = k * STAT_COUNT;
          for (let s = 0; s < STAT_COUNT; s++) acc += this.projection[row + s] * stats[s];
          cell[k] = acc;
          norm2 += acc * acc;
        }
        const inv = norm2 > 1e-24 ? 1 / Math.sqrt(norm2) : 0;
        const base = (i * w + j) * d;
        for (let k = 0; k < d; k++) {
          const value = norm2 > 1e-24 ? cell[k] * inv : k === 0 ? 1 : 0;
          grid[base + k] = value;
          mean[k] += value;
        }
      }
    }
    let norm2 = 0;
    for (let k = 0; k < d; k++) norm2 += mean[k] * mean[k];
    const inv = norm2 > 1e-24 ? 1 / Math.sqrt(norm2) : 0;
    const global = new Float32Array(d);
    for (let k = 0; k < d; k++) global[k] = norm2 > 1e-24 ? mean[k] * inv : k === 0 ? 1 : 0;
    return { grid, global };
  }
}

export const BACKBONES = ["patch-stats"] as const;

export function createBackbone(name: string, dim: number, seed: number): Backbone {
  if (name === "patch-stats") return new PatchStatsBackbone(dim, seed);
  throw new DataError(
    `unknown backbone ${JSON.stringify(name)}; available: ${BACKBONES.join(", ")}`,
  );
}
