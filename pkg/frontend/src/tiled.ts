/**
 * Tile-parallel labeling: each worker labels a horizontal band, then a
 * merge pass unions components that touch across band boundaries.
 * Component structure (memberships, counts) matches single-pass
 * labeling exactly; only label numbering may differ before compaction.
 */

import { DisjointSet, componentStats, gateAndClassify, labelComponents,
         thresholdMask } from "./scoring.js";
import type { PostprocessParams, PreviewResult, SegPlanes } from "./types.js";

export interface BandPlan {
  y0: number;
  y1: number;
}

export function planBands(height: number, bandCount: number): BandPlan[] {
  const bands: BandPlan[] = [];
  const count = Math.max(1, Math.min(bandCount, height));
  const step = Math.ceil(height / count);
  for (let y0 = 0; y0 < height; y0 += step) {
    bands.push({ y0, y1: Math.min(y0 + step, height) });
  }
  return bands;
}

export interface BandLabels {
  y0: number;
  y1: number;
  labels: Int32Array; // (y1-y0) * width, local labels 1..count
  count: number;
}

/** Label one band's rows in isolation (no apron; merge handles seams). */
export function labelBand(mask: Uint8Array, width: number,
                          band: BandPlan): BandLabels {
  const sub = mask.subarray(band.y0 * width, band.y1 * width);
  const { labels, count } = labelComponents(sub, width, band.y1 - band.y0);
  return { y0: band.y0, y1: band.y1, labels, count };
}

/**
 * Stitch band labelings into one global labeling by unioning 8-adjacent
 * foreground pixels across each band seam.
 */
export function mergeBands(bands: BandLabels[], width: number,
                           height: number): { labels: Int32Array; count: number } {
  const offsets: number[] = [0];
  let total = 0;
  for (const band of bands) {
    total += band.count;
    offsets.push(total);
  }
  const global = new Int32Array(width * height);
  bands.forEach((band, index) => {
    const offset = offsets[index];
    const base = band.y0 * width;
    for (let i = 0; i < band.labels.length; i++) {
      const label = band.labels[i];
      if (label) global[base + i] = offset + label;
    }
  });

  const dsu = new DisjointSet(total + 1);
  for (let b = 0; b + 1 < bands.length; b++) {
    const seamTop = (bands[b].y1 - 1) * width;
    const seamBottom = bands[b].y1 * width;
    for (let x = 0; x < width; x++) {
      const top = global[seamTop + x];
      if (!top) continue;
      for (let dx = -1; dx <= 1; dx++) {
        const nx = x + dx;
        if (nx < 0 || nx >= width) continue;
        const bottom = global[seamBottom + nx];
        if (bottom) dsu.union(top, bottom);
      }
    }
  }

  // compact to contiguous labels in raster order of first pixel
  const remap = new Int32Array(total + 1);
  let count = 0;
  for (let i = 0; i < global.length; i++) {
    const label = global[i];
    if (!label) continue;
    const root = dsu.find(label);
    if (!remap[root]) remap[root] = ++count;
    global[i] = remap[root];
  }
  return { labels: global, count };
}

/** Full tiled recompute (synchronous form used by tests and the fallback). */
export function runTiled(planes: SegPlanes, params: PostprocessParams,
                         bandCount: number): PreviewResult {
  const mask = thresholdMask(planes.fg, params.segThreshold);
  const bands = planBands(planes.height, bandCount)
    .map((band) => labelBand(mask, planes.width, band));
  const { labels, count } = mergeBands(bands, planes.width, planes.height);
  const stats = componentStats(labels, count, planes.pos);
  return gateAndClassify(labels, count, stats, params);
}
