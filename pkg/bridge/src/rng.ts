/** Deterministic random numbers without transcendental functions.
 *
 * Feature export must be byte-identical across runs and across JS
 * engines. Math.log/Math.cos are only approximately specified by the
 * language, so everything here sticks to integer mixing, arithmetic, and
 * Math.sqrt (which IEEE 754 pins to correct rounding).
 */

/** 32-bit stream generator (mulberry32), uniform in [0, 1). */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t = (t ^ (t + Math.imul(t ^ (t >>> 7), t | 61))) >>> 0;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** FNV-1a over the UTF-8 bytes of a string. */
export function fnv1a32(text: string): number {
  const bytes = Buffer.from(text, "utf8");
  let hash = 0x811c9dc5;
  for (const b of bytes) {
    hash ^= b;
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** Mix two 32-bit values into one seed. */
export function combineSeeds(a: number, b: number): number {
  let x = (a >>> 0) ^ 0x9e3779b9;
  x = Math.imul(x ^ (b >>> 0), 0x85ebca6b) >>> 0;
  x = Math.imul(x ^ (x >>> 13), 0xc2b2ae35) >>> 0;
  return (x ^ (x >>> 16)) >>> 0;
}

/** Unit vector with entries drawn uniformly from [-1, 1), then normalized. */
export function unitVector(dim: number, seed: number): Float64Array {
  const next = mulberry32(seed);
  const v = new Float64Array(dim);
  let norm2 = 0;
  for (let i = 0; i < dim; i++) {
    v[i] = 2 * next() - 1;
    norm2 += v[i] * v[i];
  }
  if (norm2 < 1e-24) {
    // vanishing draw (astronomically unlikely): fall back to a basis vector
    v.fill(0);
    v[0] = 1;
    return v;
  }
  const inv = 1 / Math.sqrt(norm2);
  for (let i = 0; i < dim; i++) v[i] *= inv;
  return v;
}
