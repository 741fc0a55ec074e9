/** Text-side anchor vectors.
 *
 * A phrase maps to a deterministic unit vector: the phrase's hash mixed
 * with the run seed selects the random stream. The same phrase under the
 * same seed and dimension always yields the same vector, so a pair of
 * anchors can serve as a reproducible prompt initialization for the
 * detection pipeline.
 */

import { FeatureFile } from "./padf.js";
import { combineSeeds, fnv1a32, unitVector } from "./rng.js";

export function textAnchor(phrase: string, dim: number, seed: number): Float64Array {
  return unitVector(dim, combineSeeds(seed, fnv1a32(phrase)));
}

/** Anchor as a prompt vector file: h = w = 1, vector as grid and global. */
export function anchorFile(phrase: string, dim: number, seed: number): FeatureFile {
  const vector = Float32Array.from(textAnchor(phrase, dim, seed));
  return { h: 1, w: 1, d: dim, grid: vector, global: Float32Array.from(vector) };
}
