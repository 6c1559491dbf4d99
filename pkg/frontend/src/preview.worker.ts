/** Preview worker: per-band labeling and per-band RGBA rendering. */

import { boundaryMask } from "./outlines.js";
import { componentStats, labelComponents, thresholdMask } from "./scoring.js";
import type { LabelRequest, RenderRequest, WorkerRequest } from "./protocol.js";

const POSITIVE = [255, 0, 0];
const NEGATIVE = [0, 0, 255];

function handleLabel(req: LabelRequest): void {
  const height = req.y1 - req.y0;
  const mask = thresholdMask(req.fg, req.segThreshold);
  const { labels, count } = labelComponents(mask, req.width, height);
  const stats = componentStats(labels, count, req.pos);
  postMessage(
    { kind: "label", jobId: req.jobId, bandIndex: req.bandIndex, y0: req.y0,
      labels, count, area: stats.area, posByteSum: stats.posByteSum },
    { transfer: [labels.buffer, stats.area.buffer, stats.posByteSum.buffer] },
  );
}

function handleRender(req: RenderRequest): void {
  const { labels, finalRemap, labelOffset, positive, background } = req;
  const height = labels.length / req.width;
  const finals = new Int32Array(labels.length);
  for (let i = 0; i < labels.length; i++) {
    const local = labels[i];
    finals[i] = local ? finalRemap[labelOffset + local] : 0;
  }
  if (req.outlines) {
    // band-local boundaries; seam rows may miss a cross-band edge pixel,
    // which is invisible in practice and never affects scoring
    const boundary = boundaryMask(finals, req.width, height);
    for (let i = 0; i < boundary.length; i++) {
      if (!boundary[i]) continue;
      const color = positive[finals[i]] ? POSITIVE : NEGATIVE;
      background[i * 4] = color[0];
      background[i * 4 + 1] = color[1];
      background[i * 4 + 2] = color[2];
      background[i * 4 + 3] = 255;
    }
  }
  postMessage(
    { kind: "render", jobId: req.jobId, bandIndex: req.bandIndex, y0: req.y0,
      rgba: background, labels },
    { transfer: [background.buffer, labels.buffer] },
  );
}

self.onmessage = (event: MessageEvent<WorkerRequest>) => {
  const req = event.data;
  if (req.kind === "label") handleLabel(req);
  else handleRender(req);
};
