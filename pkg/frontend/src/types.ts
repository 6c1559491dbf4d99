/** Shared wire and view-state types. */

export interface PostprocessParams {
  segThreshold: number;
  sizeGateMin: number;
  sizeGateMax: number | null;
  markerThreshold: number;
}

export const DEFAULT_PARAMS: PostprocessParams = {
  segThreshold: 0.5,
  sizeGateMin: 20,
  sizeGateMax: null,
  markerThreshold: 0.5,
};

export interface Scoring {
  num_total: number;
  num_pos: number;
  percent_pos: number;
}

/** Raw per-pixel scores unpacked from the seg_raw image (R/B bytes). */
export interface SegPlanes {
  width: number;
  height: number;
  pos: Uint8Array;
  fg: Uint8Array;
}

/** One labeled, classified cell population after gating. */
export interface PreviewResult {
  /** final contiguous labels, 0 = background */
  labels: Int32Array;
  count: number;
  /** per final label (index 1..count): true = marker-positive */
  positive: Uint8Array;
  scoring: Scoring;
}

export interface ChannelState {
  enabled: boolean;
  lo: number;
  hi: number;
}

export interface ChannelViewState {
  marker: ChannelState;
  dapi: ChannelState;
  lap2: ChannelState;
}

export function paramsToQuery(params: PostprocessParams): Record<string, string> {
  const query: Record<string, string> = {
    seg_threshold: String(params.segThreshold),
    size_gate_min: String(params.sizeGateMin),
    marker_threshold: String(params.markerThreshold),
  };
  if (params.sizeGateMax !== null) {
    query.size_gate_max = String(params.sizeGateMax);
  }
  return query;
}
