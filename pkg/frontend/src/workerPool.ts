/**
 * Worker-parallel preview engine with latest-wins coalescing: at most
 * one recompute is in flight; slider events arriving meanwhile replace
 * the pending request. Falls back to synchronous recompute when workers
 * are unavailable (same algorithms, same results).
 */

import { drawOutlines } from "./outlines.js";
import { DisjointSet } from "./scoring.js";
import { planBands, runTiled } from "./tiled.js";
import type { LabelResponse, RenderResponse, WorkerResponse } from "./protocol.js";
import type { PostprocessParams, Scoring, SegPlanes } from "./types.js";

export interface PreviewRequest {
  params: PostprocessParams;
  /** canonical-scale RGBA background to draw outlines over */
  background: Uint8ClampedArray;
  outlines: boolean;
}

export interface PreviewOutput {
  scoring: Scoring;
  rgba: Uint8ClampedArray;
  width: number;
  height: number;
}

type Listener = (out: PreviewOutput) => void;

export class PreviewEngine {
  private planes: SegPlanes | null = null;
  private workers: Worker[] = [];
  private busy = false;
  private pending: PreviewRequest | null = null;
  private jobCounter = 0;
  private listener: Listener | null = null;
  readonly workerCount: number;

  constructor(workerCount?: number) {
    const hardware = typeof navigator !== "undefined"
      ? navigator.hardwareConcurrency || 2 : 2;
    this.workerCount = Math.max(1, Math.min(workerCount ?? hardware, 8));
  }

  setPlanes(planes: SegPlanes): void {
    this.planes = planes;
  }

  onResult(listener: Listener): void {
    this.listener = listener;
  }

  /** Queue a recompute; a newer request replaces any waiting one. */
  schedule(request: PreviewRequest): void {
    this.pending = request;
    if (!this.busy) void this.drain();
  }

  private async drain(): Promise<void> {
    this.busy = true;
    try {
      while (this.pending) {
        const request = this.pending;
        this.pending = null;
        const output = await this.compute(request);
        this.listener?.(output);
      }
    } finally {
      this.busy = false;
    }
  }

  private ensureWorkers(): boolean {
    if (typeof Worker === "undefined") return false;
    while (this.workers.length < this.workerCount) {
      try {
        this.workers.push(new Worker(
          new URL("./preview.worker.js", import.meta.url), { type: "module" }));
      } catch {
        this.workers.forEach((w) => w.terminate());
        this.workers = [];
        return false;
      }
    }
    return true;
  }

  private async compute(request: PreviewRequest): Promise<PreviewOutput> {
    const planes = this.planes;
    if (!planes) throw new Error("no seg_raw planes loaded");
    if (!this.ensureWorkers()) {
      return this.computeSync(planes, request);
    }
    const jobId = ++this.jobCounter;
    const bands = planBands(planes.height, this.workerCount);

    // phase 1: label bands in parallel
    const labelResponses = await Promise.all(bands.map((band, index) => {
      const fg = planes.fg.slice(band.y0 * planes.width, band.y1 * planes.width);
      const pos = planes.pos.slice(band.y0 * planes.width, band.y1 * planes.width);
      return this.call(index, {
        kind: "label", jobId, bandIndex: index, y0: band.y0, y1: band.y1,
        width: planes.width, segThreshold: request.params.segThreshold, fg, pos,
      }, [fg.buffer, pos.buffer]) as Promise<LabelResponse>;
    }));

    // merge across seams on provisional global ids
    const offsets: number[] = [0];
    let total = 0;
    for (const resp of labelResponses) {
      total += resp.count;
      offsets.push(total);
    }
    const dsu = new DisjointSet(total + 1);
    const width = planes.width;
    for (let b = 0; b + 1 < labelResponses.length; b++) {
      const top = labelResponses[b];
      const bottom = labelResponses[b + 1];
      const topRow = (top.labels.length / width - 1) * width;
      for (let x = 0; x < width; x++) {
        const topLabel = top.labels[topRow + x];
        if (!topLabel) continue;
        const topId = offsets[b] + topLabel;
        for (let dx = -1; dx <= 1; dx++) {
          const nx = x + dx;
          if (nx < 0 || nx >= width) continue;
          const bottomLabel = bottom.labels[nx];
          if (bottomLabel) dsu.union(topId, offsets[b + 1] + bottomLabel);
        }
      }
    }

    // aggregate per root, gate, classify (per-label work only)
    const rootArea = new Float64Array(total + 1);
    const rootPosSum = new Float64Array(total + 1);
    labelResponses.forEach((resp, index) => {
      for (let local = 1; local <= resp.count; local++) {
        const root = dsu.find(offsets[index] + local);
        rootArea[root] += resp.area[local];
        rootPosSum[root] += resp.posByteSum[local];
      }
    });
    const finalRemap = new Int32Array(total + 1);
    const positiveFlags: number[] = [0];
    let kept = 0;
    let numPos = 0;
    for (let id = 1; id <= total; id++) {
      if (dsu.find(id) !== id) continue;
      const area = rootArea[id];
      if (area < request.params.sizeGateMin) continue;
      if (request.params.sizeGateMax !== null &&
          area > request.params.sizeGateMax) continue;
      kept++;
      const positive = rootPosSum[id] / (255 * area) >= request.params.markerThreshold;
      if (positive) numPos++;
      finalRemap[id] = kept;
      positiveFlags.push(positive ? 1 : 0);
    }
    for (let id = 1; id <= total; id++) {
      const root = dsu.find(id);
      if (root !== id) finalRemap[id] = finalRemap[root];
    }
    const positive = Uint8Array.from(positiveFlags);
    const scoring: Scoring = {
      num_total: kept, num_pos: numPos,
      percent_pos: kept > 0 ? (100 * numPos) / kept : 0,
    };

    // phase 2: render bands in parallel over the provided background
    const rgba = new Uint8ClampedArray(planes.width * planes.height * 4);
    const renders = await Promise.all(bands.map((band, index) => {
      const slice = request.background.slice(band.y0 * width * 4, band.y1 * width * 4);
      const resp = labelResponses[index];
      return this.call(index, {
        kind: "render", jobId, bandIndex: index, y0: band.y0, width,
        labels: resp.labels, finalRemap: finalRemap.slice(), labelOffset: offsets[index],
        positive: positive.slice(), background: slice, outlines: request.outlines,
      }, [resp.labels.buffer, slice.buffer]) as Promise<RenderResponse>;
    }));
    for (const resp of renders) {
      rgba.set(resp.rgba, resp.y0 * width * 4);
    }
    return { scoring, rgba, width: planes.width, height: planes.height };
  }

  private computeSync(planes: SegPlanes, request: PreviewRequest): PreviewOutput {
    const preview = runTiled(planes, request.params, this.workerCount);
    const rgba = request.background.slice();
    if (request.outlines) {
      drawOutlines(rgba, preview, planes.width, planes.height);
    }
    return { scoring: preview.scoring, rgba, width: planes.width, height: planes.height };
  }

  private call(workerIndex: number, message: unknown,
               transfer: Transferable[]): Promise<WorkerResponse> {
    const worker = this.workers[workerIndex];
    return new Promise((resolve, reject) => {
      const onMessage = (event: MessageEvent<WorkerResponse>) => {
        worker.removeEventListener("message", onMessage);
        worker.removeEventListener("error", onError);
        resolve(event.data);
      };
      const onError = (event: ErrorEvent) => {
        worker.removeEventListener("message", onMessage);
        worker.removeEventListener("error", onError);
        reject(event.error ?? new Error(event.message));
      };
      worker.addEventListener("message", onMessage);
      worker.addEventListener("error", onError);
      worker.postMessage(message, transfer);
    });
  }

  dispose(): void {
    this.workers.forEach((w) => w.terminate());
    this.workers = [];
  }
}
