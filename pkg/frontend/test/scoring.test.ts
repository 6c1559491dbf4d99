import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { componentStats, gateAndClassify, labelComponents, runPostprocess,
         thresholdMask } from "../src/scoring.js";
import { runTiled } from "../src/tiled.js";
import { DEFAULT_PARAMS } from "../src/types.js";
import type { PostprocessParams, SegPlanes } from "../src/types.js";

interface ParityCase {
  params: {
    seg_threshold: number;
    size_gate_min: number;
    size_gate_max?: number;
    marker_threshold: number;
  };
  expected: { num_total: number; num_pos: number; percent_pos: number };
}

interface ParityFixture {
  width: number;
  height: number;
  truth: { num_total: number; num_pos: number };
  pos_b64: string;
  fg_b64: string;
  cases: ParityCase[];
}

function loadParity(): { planes: SegPlanes; fixture: ParityFixture } {
  const fixture = JSON.parse(
    readFileSync(new URL("./fixtures/parity.json", import.meta.url), "utf-8"),
  ) as ParityFixture;
  const planes: SegPlanes = {
    width: fixture.width,
    height: fixture.height,
    pos: new Uint8Array(Buffer.from(fixture.pos_b64, "base64")),
    fg: new Uint8Array(Buffer.from(fixture.fg_b64, "base64")),
  };
  return { planes, fixture };
}

function toParams(c: ParityCase): PostprocessParams {
  return {
    segThreshold: c.params.seg_threshold,
    sizeGateMin: c.params.size_gate_min,
    sizeGateMax: c.params.size_gate_max ?? null,
    markerThreshold: c.params.marker_threshold,
  };
}

describe("server parity (acceptance: preview equals /api/adjust)", () => {
  const { planes, fixture } = loadParity();

  it("reproduces the fixture truth at default parameters", () => {
    const result = runPostprocess(planes, DEFAULT_PARAMS);
    expect(result.scoring.num_total).toBe(fixture.truth.num_total);
    expect(result.scoring.num_pos).toBe(fixture.truth.num_pos);
  });

  for (const [index, parityCase] of fixture.cases.entries()) {
    it(`matches /api/adjust for random parameter set ${index}`, () => {
      const params = toParams(parityCase);
      const single = runPostprocess(planes, params);
      expect(single.scoring.num_total).toBe(parityCase.expected.num_total);
      expect(single.scoring.num_pos).toBe(parityCase.expected.num_pos);
      // tile-parallel path must agree, for any band count
      for (const bands of [2, 3, 7]) {
        const tiled = runTiled(planes, params, bands);
        expect(tiled.scoring.num_total).toBe(parityCase.expected.num_total);
        expect(tiled.scoring.num_pos).toBe(parityCase.expected.num_pos);
      }
    });
  }
});

describe("thresholdMask", () => {
  it("keeps everything at t=0 and uses >= at ties", () => {
    const fg = new Uint8Array([0, 127, 128, 255]);
    expect(Array.from(thresholdMask(fg, 0))).toEqual([1, 1, 1, 1]);
    // 127/255 < 0.5 <= 128/255
    expect(Array.from(thresholdMask(fg, 0.5))).toEqual([0, 0, 1, 1]);
    expect(Array.from(thresholdMask(fg, 1))).toEqual([0, 0, 0, 1]);
  });
});

describe("labelComponents", () => {
  it("joins diagonal neighbors (8-connectivity)", () => {
    const mask = new Uint8Array([
      1, 0, 0,
      0, 1, 0,
      0, 0, 1,
    ]);
    expect(labelComponents(mask, 3, 3).count).toBe(1);
  });

  it("separates distant blobs and numbers them in raster order", () => {
    const mask = new Uint8Array(8 * 8);
    mask[7] = 1;              // (7, 0) first in raster order
    mask[6 * 8 + 1] = 1;      // (1, 6)
    const { labels, count } = labelComponents(mask, 8, 8);
    expect(count).toBe(2);
    expect(labels[7]).toBe(1);
    expect(labels[6 * 8 + 1]).toBe(2);
  });

  it("resolves u-shaped merges to one component", () => {
    // two arms meet at the bottom; union-find must collapse them
    const mask = new Uint8Array([
      1, 0, 1,
      1, 0, 1,
      1, 1, 1,
    ]);
    expect(labelComponents(mask, 3, 3).count).toBe(1);
  });
});

describe("gateAndClassify", () => {
  function planesFrom(fg: number[], pos: number[], width: number): SegPlanes {
    return { width, height: fg.length / width,
             fg: new Uint8Array(fg), pos: new Uint8Array(pos) };
  }

  it("drops components outside the size band", () => {
    // one 1-px blob and one 3-px blob
    const planes = planesFrom(
      [255, 0, 255, 255, 255],
      [0, 0, 0, 0, 0], 5);
    const small = runPostprocess(planes, { ...DEFAULT_PARAMS, sizeGateMin: 2 });
    expect(small.scoring.num_total).toBe(1);
    const band = runPostprocess(planes,
      { ...DEFAULT_PARAMS, sizeGateMin: 0, sizeGateMax: 2 });
    expect(band.scoring.num_total).toBe(1);
  });

  it("classifies by the exact integer-sum mean with a >= tie rule", () => {
    // bytes 102 and 153 average to exactly 0.5 on the wire grid
    const planes = planesFrom([255, 255], [102, 153], 2);
    const result = runPostprocess(planes, { ...DEFAULT_PARAMS, sizeGateMin: 0 });
    expect(result.scoring.num_total).toBe(1);
    expect(result.scoring.num_pos).toBe(1);
    const stats = componentStats(result.labels, result.count, planes.pos);
    expect(stats.posByteSum[1] / (255 * stats.area[1])).toBe(0.5);
  });

  it("computes percent at full precision", () => {
    const planes = planesFrom(
      [255, 0, 255, 0, 255, 0, 0, 0, 0],
      [255, 0, 0, 0, 0, 0, 0, 0, 0], 9);
    const result = runPostprocess(planes, { ...DEFAULT_PARAMS, sizeGateMin: 0 });
    expect(result.scoring.num_total).toBe(3);
    expect(result.scoring.num_pos).toBe(1);
    expect(result.scoring.percent_pos).toBeCloseTo(100 / 3, 12);
  });

  it("handles the empty image", () => {
    const planes = planesFrom([0, 0, 0, 0], [0, 0, 0, 0], 2);
    const result = runPostprocess(planes, DEFAULT_PARAMS);
    expect(result.scoring).toEqual({ num_total: 0, num_pos: 0, percent_pos: 0 });
  });

  it("renumbers survivors contiguously", () => {
    const fg = new Uint8Array(10 * 3);
    // three blobs of areas 1, 3, 1 on separate rows... laid out on one row axis
    fg[0] = 255;
    fg[10 + 2] = 255; fg[10 + 3] = 255; fg[10 + 4] = 255;
    fg[20 + 8] = 255;
    const planes: SegPlanes = { width: 10, height: 3, fg,
                                pos: new Uint8Array(30) };
    const mask = thresholdMask(planes.fg, 0.5);
    const { labels, count } = labelComponents(mask, 10, 3);
    const stats = componentStats(labels, count, planes.pos);
    const gated = gateAndClassify(labels, count, stats,
      { ...DEFAULT_PARAMS, sizeGateMin: 2 });
    expect(gated.count).toBe(1);
    const present = new Set(Array.from(gated.labels).filter((v) => v > 0));
    expect(present).toEqual(new Set([1]));
  });
});
