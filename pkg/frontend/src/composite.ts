/**
 * Multiplex pseudo-color compositing: marker->R, lap2->G, dapi->B.
 * Channels are windowed independently; with the identity window (0, 1)
 * an enabled channel reproduces its byte plane exactly, and a disabled
 * channel contributes zero everywhere.
 */

import type { ChannelState, ChannelViewState } from "./types.js";

export function windowByte(value: number, channel: ChannelState): number {
  if (!channel.enabled) return 0;
  const span = channel.hi - channel.lo;
  if (!(span > 0)) throw new Error(`invalid window [${channel.lo}, ${channel.hi}]`);
  const scaled = (value / 255 - channel.lo) / span;
  const clamped = scaled < 0 ? 0 : scaled > 1 ? 1 : scaled;
  return Math.round(clamped * 255);
}

function windowPlane(plane: Uint8Array | null, channel: ChannelState,
                     n: number): Uint8Array {
  const out = new Uint8Array(n);
  if (!plane || !channel.enabled) return out;
  // 256-entry lookup table; windowing is pointwise on bytes
  const lut = new Uint8Array(256);
  for (let v = 0; v < 256; v++) lut[v] = windowByte(v, channel);
  for (let i = 0; i < n; i++) out[i] = lut[plane[i]];
  return out;
}

export function compositeRgba(marker: Uint8Array | null, lap2: Uint8Array | null,
                              dapi: Uint8Array | null, view: ChannelViewState,
                              width: number, height: number): Uint8ClampedArray {
  const n = width * height;
  const r = windowPlane(marker, view.marker, n);
  const g = windowPlane(lap2, view.lap2, n);
  const b = windowPlane(dapi, view.dapi, n);
  const rgba = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    rgba[i * 4] = r[i];
    rgba[i * 4 + 1] = g[i];
    rgba[i * 4 + 2] = b[i];
    rgba[i * 4 + 3] = 255;
  }
  return rgba;
}
