/**
 * Client-side post-processing: threshold, 8-connected labeling, size
 * gating, classification, scoring.
 *
 * This mirrors the server arithmetic exactly: masks compare
 * (byte / 255) >= threshold in IEEE doubles, and per-cell positivity is
 * the integer sum of score bytes divided once by (255 * area). Given the
 * same seg_raw bytes and parameters, (num_total, num_pos) here equals
 * the server's /api/adjust response.
 */

import type { PostprocessParams, PreviewResult, Scoring, SegPlanes } from "./types.js";

export function thresholdMask(fg: Uint8Array, t: number): Uint8Array {
  const mask = new Uint8Array(fg.length);
  for (let i = 0; i < fg.length; i++) {
    mask[i] = fg[i] / 255 >= t ? 1 : 0;
  }
  return mask;
}

/** Union-find over preallocated parent table. */
export class DisjointSet {
  parent: Int32Array;

  constructor(size: number) {
    this.parent = new Int32Array(size);
    for (let i = 0; i < size; i++) this.parent[i] = i;
  }

  find(x: number): number {
    let root = x;
    while (this.parent[root] !== root) root = this.parent[root];
    while (this.parent[x] !== root) {
      const next = this.parent[x];
      this.parent[x] = root;
      x = next;
    }
    return root;
  }

  union(a: number, b: number): void {
    const ra = this.find(a);
    const rb = this.find(b);
    if (ra !== rb) this.parent[Math.max(ra, rb)] = Math.min(ra, rb);
  }
}

export interface LabelResult {
  labels: Int32Array;
  count: number;
}

/**
 * Two-pass 8-connected labeling. Labels are contiguous 1..count in
 * raster order of each component's first pixel.
 */
export function labelComponents(mask: Uint8Array, width: number, height: number): LabelResult {
  const labels = new Int32Array(width * height);
  // provisional labels start at 1; worst case every other pixel is new
  const dsu = new DisjointSet(((width * height) >> 1) + 2);
  let next = 1;
  for (let y = 0; y < height; y++) {
    const row = y * width;
    const above = row - width;
    for (let x = 0; x < width; x++) {
      if (!mask[row + x]) continue;
      let label = 0;
      // west, north-west, north, north-east
      if (x > 0 && labels[row + x - 1]) label = labels[row + x - 1];
      if (y > 0) {
        for (let dx = -1; dx <= 1; dx++) {
          const nx = x + dx;
          if (nx < 0 || nx >= width) continue;
          const neighbor = labels[above + nx];
          if (neighbor) {
            if (label && neighbor !== label) dsu.union(label, neighbor);
            else label = neighbor;
          }
        }
      }
      if (!label) label = next++;
      labels[row + x] = label;
    }
  }
  // compress to contiguous labels in first-pixel raster order
  const remap = new Int32Array(next);
  let count = 0;
  for (let i = 0; i < labels.length; i++) {
    const label = labels[i];
    if (!label) continue;
    const root = dsu.find(label);
    if (!remap[root]) remap[root] = ++count;
    labels[i] = remap[root];
  }
  return { labels, count };
}

export interface ComponentStats {
  area: Float64Array;       // index 1..count
  posByteSum: Float64Array; // integer-valued, exact up to 2^53
}

export function componentStats(labels: Int32Array, count: number,
                               pos: Uint8Array): ComponentStats {
  const area = new Float64Array(count + 1);
  const posByteSum = new Float64Array(count + 1);
  for (let i = 0; i < labels.length; i++) {
    const label = labels[i];
    if (!label) continue;
    area[label] += 1;
    posByteSum[label] += pos[i];
  }
  return { area, posByteSum };
}

/**
 * Apply the size gate and classification to labeled components,
 * producing final contiguous labels and the scoring triple.
 */
export function gateAndClassify(labels: Int32Array, count: number,
                                stats: ComponentStats,
                                params: PostprocessParams): PreviewResult {
  const remap = new Int32Array(count + 1);
  let kept = 0;
  for (let label = 1; label <= count; label++) {
    const area = stats.area[label];
    if (area < params.sizeGateMin) continue;
    if (params.sizeGateMax !== null && area > params.sizeGateMax) continue;
    remap[label] = ++kept;
  }
  const positive = new Uint8Array(kept + 1);
  let numPos = 0;
  for (let label = 1; label <= count; label++) {
    const final = remap[label];
    if (!final) continue;
    const mean = stats.posByteSum[label] / (255 * stats.area[label]);
    if (mean >= params.markerThreshold) {
      positive[final] = 1;
      numPos++;
    }
  }
  const out = new Int32Array(labels.length);
  for (let i = 0; i < labels.length; i++) {
    out[i] = remap[labels[i]];
  }
  const scoring: Scoring = {
    num_total: kept,
    num_pos: numPos,
    percent_pos: kept > 0 ? (100 * numPos) / kept : 0,
  };
  return { labels: out, count: kept, positive, scoring };
}

/** Full single-threaded recompute; the reference the tiled path must match. */
export function runPostprocess(planes: SegPlanes, params: PostprocessParams): PreviewResult {
  const mask = thresholdMask(planes.fg, params.segThreshold);
  const { labels, count } = labelComponents(mask, planes.width, planes.height);
  const stats = componentStats(labels, count, planes.pos);
  return gateAndClassify(labels, count, stats, params);
}
