/** seg_raw unpacking: R carries positivity bytes, B carries foreground. */

import type { SegPlanes } from "./types.js";

export function planesFromImageData(data: Uint8ClampedArray, width: number,
                                    height: number): SegPlanes {
  const n = width * height;
  const pos = new Uint8Array(n);
  const fg = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    pos[i] = data[i * 4];
    fg[i] = data[i * 4 + 2];
  }
  return { width, height, pos, fg };
}

/** Grayscale byte plane from RGBA canvas data (modality images). */
export function grayFromImageData(data: Uint8ClampedArray, width: number,
                                  height: number): Uint8Array {
  const n = width * height;
  const gray = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    gray[i] = data[i * 4];
  }
  return gray;
}
