/** Messages exchanged with preview workers. */

export interface LabelRequest {
  kind: "label";
  jobId: number;
  bandIndex: number;
  y0: number;
  y1: number;
  width: number;
  segThreshold: number;
  fg: Uint8Array;   // band rows only
  pos: Uint8Array;  // band rows only
}

export interface LabelResponse {
  kind: "label";
  jobId: number;
  bandIndex: number;
  y0: number;
  labels: Int32Array;     // local band labels 1..count
  count: number;
  area: Float64Array;     // per local label, index 1..count
  posByteSum: Float64Array;
}

export interface RenderRequest {
  kind: "render";
  jobId: number;
  bandIndex: number;
  y0: number;
  width: number;
  labels: Int32Array;       // local band labels (returned from the label phase)
  finalRemap: Int32Array;   // provisional global id -> final label (0 = dropped)
  labelOffset: number;      // band local -> provisional global id offset
  positive: Uint8Array;     // per final label
  background: Uint8ClampedArray; // band RGBA to draw over
  outlines: boolean;
}

export interface RenderResponse {
  kind: "render";
  jobId: number;
  bandIndex: number;
  y0: number;
  rgba: Uint8ClampedArray;
  labels: Int32Array; // handed back so the next render can reuse them
}

export type WorkerRequest = LabelRequest | RenderRequest;
export type WorkerResponse = LabelResponse | RenderResponse;
