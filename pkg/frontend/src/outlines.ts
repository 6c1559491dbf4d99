/**
 * Cell outline rendering: a foreground pixel is a boundary pixel when a
 * 4-neighbor carries a different label (out-of-bounds counts as
 * background). Positive cells draw red, negative blue.
 */

import type { PreviewResult } from "./types.js";

const POSITIVE = [255, 0, 0];
const NEGATIVE = [0, 0, 255];

export function boundaryMask(labels: Int32Array, width: number,
                             height: number): Uint8Array {
  const mask = new Uint8Array(labels.length);
  for (let y = 0; y < height; y++) {
    const row = y * width;
    for (let x = 0; x < width; x++) {
      const label = labels[row + x];
      if (!label) continue;
      const isBoundary =
        x === 0 || labels[row + x - 1] !== label ||
        x === width - 1 || labels[row + x + 1] !== label ||
        y === 0 || labels[row + x - width] !== label ||
        y === height - 1 || labels[row + x + width] !== label;
      if (isBoundary) mask[row + x] = 1;
    }
  }
  return mask;
}

/** Paint outlines in place over an RGBA buffer of the same dimensions. */
export function drawOutlines(rgba: Uint8ClampedArray, preview: PreviewResult,
                             width: number, height: number): void {
  const boundary = boundaryMask(preview.labels, width, height);
  for (let i = 0; i < boundary.length; i++) {
    if (!boundary[i]) continue;
    const color = preview.positive[preview.labels[i]] ? POSITIVE : NEGATIVE;
    rgba[i * 4] = color[0];
    rgba[i * 4 + 1] = color[1];
    rgba[i * 4 + 2] = color[2];
    rgba[i * 4 + 3] = 255;
  }
}

/**
 * Nearest-neighbor upsample of final labels to the original image
 * dimensions (top-left aligned, matching the server's overlay).
 */
export function resizeLabelsNearest(labels: Int32Array, width: number, height: number,
                                    outWidth: number, outHeight: number): Int32Array {
  const out = new Int32Array(outWidth * outHeight);
  for (let y = 0; y < outHeight; y++) {
    const sy = Math.min(Math.floor((y * height) / outHeight), height - 1);
    for (let x = 0; x < outWidth; x++) {
      const sx = Math.min(Math.floor((x * width) / outWidth), width - 1);
      out[y * outWidth + x] = labels[sy * width + sx];
    }
  }
  return out;
}
