/**
 * Single-page app: home (upload + samples) -> verify (resolution) ->
 * results (thumbnails, scoring, export, feedback) -> adjust (live
 * worker-parallel preview with server reconciliation).
 */

import * as api from "./api.js";
import { compositeRgba } from "./composite.js";
import { grayFromImageData, planesFromImageData } from "./segraw.js";
import { PreviewEngine } from "./workerPool.js";
import { DEFAULT_PARAMS } from "./types.js";
import type { ChannelViewState, PostprocessParams, Scoring } from "./types.js";

const app = () => document.getElementById("app") as HTMLElement;

/** element builder: h("div", {class: "x"}, child, ...) */
function h(tag: string, attrs: Record<string, string> = {},
           ...children: (Node | string)[]): HTMLElement {
  const el = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) el.setAttribute(key, value);
  for (const child of children) {
    el.append(typeof child === "string" ? document.createTextNode(child) : child);
  }
  return el;
}

function navigate(hash: string): void {
  window.location.hash = hash;
}

function setStatus(message: string, isError = false): void {
  const bar = document.getElementById("status");
  if (!bar) return;
  bar.textContent = message;
  bar.className = isError ? "status error" : "status";
}

const uploadCache = new Map<string, api.UploadResponse>();

/** Run an action; when the terms gate intervenes, show it and retry. */
async function withTermsGate<T>(action: () => Promise<T>): Promise<T> {
  try {
    return await action();
  } catch (err) {
    if (err instanceof api.ApiError && err.status === 403) {
      await showTermsDialog();
      return action();
    }
    throw err;
  }
}

async function showTermsDialog(): Promise<void> {
  const { terms } = await api.fetchTerms();
  await new Promise<void>((resolve) => {
    const accept = h("button", { class: "primary" }, "Accept and continue");
    const overlay = h("div", { class: "modal-overlay" },
      h("div", { class: "modal" },
        h("h2", {}, "Terms of Use"),
        h("p", {}, terms),
        accept));
    accept.addEventListener("click", async () => {
      await api.acceptTerms();
      overlay.remove();
      resolve();
    });
    document.body.append(overlay);
  });
}

function scoringPanel(scoring: Scoring, digits: number | null = 1): HTMLElement {
  const percent = digits === null
    ? String(scoring.percent_pos) : scoring.percent_pos.toFixed(digits);
  return h("div", { class: "scoring" },
    h("div", { class: "metric" }, h("b", {}, String(scoring.num_total)),
      h("span", {}, "nuclei")),
    h("div", { class: "metric" }, h("b", {}, String(scoring.num_pos)),
      h("span", {}, "positive")),
    h("div", { class: "metric" }, h("b", {}, `${percent}%`),
      h("span", {}, "positive fraction")));
}

// ---------------------------------------------------------------- home

async function renderHome(): Promise<void> {
  const fileInput = h("input", { type: "file", accept: "image/*", hidden: "" }) as HTMLInputElement;
  const dropZone = h("div", { class: "dropzone" },
    h("p", {}, "Drop an IHC image here"),
    h("p", { class: "muted" }, "or"),
    h("button", { class: "primary" }, "Choose a file"),
    fileInput);

  async function handleFile(file: File): Promise<void> {
    setStatus("Uploading…");
    try {
      const uploaded = await withTermsGate(() => api.uploadImage(file));
      uploadCache.set(uploaded.upload_id, uploaded);
      setStatus("");
      navigate(`#/verify/${uploaded.upload_id}`);
    } catch (err) {
      setStatus(describe(err), true);
    }
  }

  dropZone.querySelector("button")!.addEventListener("click", () => fileInput.click());
  fileInput.addEventListener("change", () => {
    if (fileInput.files?.length) void handleFile(fileInput.files[0]);
  });
  for (const name of ["dragenter", "dragover"]) {
    dropZone.addEventListener(name, (e) => {
      e.preventDefault();
      dropZone.classList.add("active");
    });
  }
  dropZone.addEventListener("dragleave", () => dropZone.classList.remove("active"));
  dropZone.addEventListener("drop", (e) => {
    e.preventDefault();
    dropZone.classList.remove("active");
    const files = (e as DragEvent).dataTransfer?.files;
    if (files?.length) void handleFile(files[0]);
  });

  const gallery = h("div", { class: "samples" });
  const page = h("section", {},
    h("h1", {}, "IHC quantification"),
    h("p", { class: "muted" },
      "Upload a brightfield IHC image to restain it virtually, segment nuclei, " +
      "and score marker positivity. Images up to 3000×3000 pixels."),
    dropZone,
    h("h2", {}, "Or try a sample"),
    gallery);
  app().replaceChildren(page);

  const samples = await api.listSamples();
  for (const name of samples) {
    const button = h("button", { class: "sample" }, name.replace(/_/g, " "));
    button.addEventListener("click", async () => {
      setStatus("Preparing sample…");
      try {
        const uploaded = await withTermsGate(() => api.uploadSample(name));
        uploadCache.set(uploaded.upload_id, uploaded);
        setStatus("");
        navigate(`#/verify/${uploaded.upload_id}`);
      } catch (err) {
        setStatus(describe(err), true);
      }
    });
    gallery.append(button);
  }
}

// -------------------------------------------------------------- verify

function renderVerify(uploadId: string): void {
  const uploaded = uploadCache.get(uploadId);
  if (!uploaded) {
    navigate("#/");
    return;
  }
  const select = h("select", {},
    h("option", { value: "10x" }, "10×"),
    h("option", { value: "20x", selected: "" }, "20× (default)"),
    h("option", { value: "40x" }, "40×")) as HTMLSelectElement;
  const processButton = h("button", { class: "primary" }, "Process") as HTMLButtonElement;
  processButton.addEventListener("click", async () => {
    processButton.disabled = true;
    processButton.textContent = "Processing…";
    try {
      const processed = await withTermsGate(
        () => api.processUpload(uploadId, select.value));
      navigate(`#/results/${processed.result_id}`);
    } catch (err) {
      setStatus(describe(err), true);
      processButton.disabled = false;
      processButton.textContent = "Process";
    }
  });
  app().replaceChildren(h("section", {},
    h("h1", {}, "Verify your image"),
    h("img", { class: "preview", alt: "uploaded image preview",
               src: `data:image/png;base64,${uploaded.thumbnail}` }),
    h("p", { class: "muted" },
      `${uploaded.width}×${uploaded.height} pixels`),
    h("label", {}, "Scan resolution (magnification): ", select),
    h("div", { class: "row" },
      h("a", { href: "#/" }, "Back"),
      processButton)));
}

// ------------------------------------------------------------- results

async function renderResults(resultId: string): Promise<void> {
  setStatus("Loading results…");
  const result = await api.fetchResult(resultId);
  setStatus("");
  const grid = h("div", { class: "grid" });
  const order = ["original", "marker", "hema", "dapi", "lap2", "seg", "overlay"];
  for (const name of order) {
    const thumb = result.thumbnails[name];
    if (!thumb) continue;
    grid.append(h("figure", {},
      h("img", { src: `data:image/png;base64,${thumb}`, alt: name }),
      h("figcaption", {}, name)));
  }
  const feedbackBox = h("textarea", {
    rows: "3", placeholder: "Comments about this image's results…" }) as HTMLTextAreaElement;
  const feedbackButton = h("button", {}, "Send feedback") as HTMLButtonElement;
  const feedbackNote = h("span", { class: "muted" }, "");
  feedbackButton.addEventListener("click", async () => {
    if (!feedbackBox.value.trim()) return;
    feedbackButton.disabled = true;
    try {
      await api.sendFeedback(resultId, feedbackBox.value.trim());
      feedbackBox.value = "";
      feedbackNote.textContent = "Thanks — feedback recorded.";
    } catch (err) {
      feedbackNote.textContent = describe(err);
    } finally {
      feedbackButton.disabled = false;
    }
  });
  app().replaceChildren(h("section", {},
    h("h1", {}, "Results"),
    scoringPanel(result.scoring),
    grid,
    h("div", { class: "row" },
      h("a", { class: "button", href: api.downloadUrl(resultId) },
        "Download all (ZIP)"),
      h("a", { class: "button", href: `#/adjust/${resultId}` },
        "Interactive adjustment"),
      h("a", { href: "#/" }, "New image")),
    h("h2", {}, "Feedback"),
    h("div", { class: "feedback" }, feedbackBox,
      h("div", { class: "row" }, feedbackButton, feedbackNote))));
}

// -------------------------------------------------------------- adjust

interface AdjustData {
  width: number;
  height: number;
  original: Uint8ClampedArray;
  marker: Uint8Array;
  dapi: Uint8Array;
  lap2: Uint8Array;
}

async function renderAdjust(resultId: string): Promise<void> {
  setStatus("Loading raw scores…");
  const result = await api.fetchResult(resultId);
  const segRaw = await api.fetchImagePixels(api.resultImageUrl(resultId, "seg_raw"));
  const planes = planesFromImageData(segRaw.data, segRaw.width, segRaw.height);
  const { width, height } = planes;
  // everything is composited at canonical (seg_raw) scale
  const [original, marker, dapi, lap2] = await Promise.all([
    api.fetchImagePixels(api.resultImageUrl(resultId, "original"), width, height),
    api.fetchImagePixels(api.resultImageUrl(resultId, "marker"), width, height),
    api.fetchImagePixels(api.resultImageUrl(resultId, "dapi"), width, height),
    api.fetchImagePixels(api.resultImageUrl(resultId, "lap2"), width, height),
  ]);
  const data: AdjustData = {
    width, height,
    original: original.data,
    marker: grayFromImageData(marker.data, width, height),
    dapi: grayFromImageData(dapi.data, width, height),
    lap2: grayFromImageData(lap2.data, width, height),
  };
  setStatus("");

  const params: PostprocessParams = {
    segThreshold: Number(result.params.seg_threshold ?? DEFAULT_PARAMS.segThreshold),
    sizeGateMin: Number(result.params.size_gate_min ?? DEFAULT_PARAMS.sizeGateMin),
    sizeGateMax: (result.params.size_gate_max ?? null) as number | null,
    markerThreshold: Number(result.params.marker_threshold ?? DEFAULT_PARAMS.markerThreshold),
  };
  const view: ChannelViewState = {
    marker: { enabled: true, lo: 0, hi: 1 },
    dapi: { enabled: true, lo: 0, hi: 1 },
    lap2: { enabled: false, lo: 0, hi: 1 },
  };
  let showMultiplex = false;
  let showOutlines = true;

  const canvas = h("canvas", { width: String(width), height: String(height),
                               class: "preview-canvas" }) as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const liveScoring = h("div", {});
  const serverNote = h("span", { class: "muted" }, "");

  const engine = new PreviewEngine();
  engine.setPlanes(planes);
  engine.onResult((output) => {
    const pixels = output.rgba as Uint8ClampedArray<ArrayBuffer>;
    ctx.putImageData(new ImageData(pixels, output.width, output.height), 0, 0);
    liveScoring.replaceChildren(scoringPanel(output.scoring, null));
  });

  function background(): Uint8ClampedArray {
    if (!showMultiplex) return data.original;
    return compositeRgba(data.marker, data.lap2, data.dapi, view, width, height);
  }

  function recompute(): void {
    engine.schedule({ params: { ...params }, background: background(),
                      outlines: showOutlines });
  }

  function slider(label: string, min: number, max: number, step: number,
                  value: number, onInput: (v: number) => void): HTMLElement {
    const input = h("input", { type: "range", min: String(min), max: String(max),
                               step: String(step), value: String(value) }) as HTMLInputElement;
    const readout = h("span", { class: "readout" }, String(value));
    input.addEventListener("input", () => {
      readout.textContent = input.value;
      onInput(Number(input.value));
      recompute();
    });
    return h("label", { class: "slider" }, label, input, readout);
  }

  function windowSliders(name: keyof ChannelViewState, label: string): HTMLElement {
    const channel = view[name];
    const enabled = h("input", { type: "checkbox" }) as HTMLInputElement;
    enabled.checked = channel.enabled;
    enabled.addEventListener("change", () => {
      channel.enabled = enabled.checked;
      recompute();
    });
    const lo = h("input", { type: "range", min: "0", max: "0.99", step: "0.01",
                            value: String(channel.lo) }) as HTMLInputElement;
    const hi = h("input", { type: "range", min: "0.01", max: "1", step: "0.01",
                            value: String(channel.hi) }) as HTMLInputElement;
    const apply = () => {
      // keep the window valid: lo < hi
      let loV = Number(lo.value);
      let hiV = Number(hi.value);
      if (loV >= hiV) {
        if (document.activeElement === lo) hiV = Math.min(1, loV + 0.01);
        else loV = Math.max(0, hiV - 0.01);
        lo.value = String(loV);
        hi.value = String(hiV);
      }
      channel.lo = loV;
      channel.hi = hiV;
      recompute();
    };
    lo.addEventListener("input", apply);
    hi.addEventListener("input", apply);
    return h("div", { class: "channel" },
      h("label", {}, enabled, ` ${label}`),
      h("div", { class: "window" }, lo, hi));
  }

  const gateMax = h("input", { type: "range", min: "0", max: "5000", step: "10",
                               value: String(params.sizeGateMax ?? 5000) }) as HTMLInputElement;
  const gateMaxEnabled = h("input", { type: "checkbox" }) as HTMLInputElement;
  gateMaxEnabled.checked = params.sizeGateMax !== null;
  const gateMaxReadout = h("span", { class: "readout" },
    params.sizeGateMax === null ? "off" : String(params.sizeGateMax));
  const applyGateMax = () => {
    params.sizeGateMax = gateMaxEnabled.checked ? Number(gateMax.value) : null;
    gateMaxReadout.textContent = gateMaxEnabled.checked ? gateMax.value : "off";
    recompute();
  };
  gateMax.addEventListener("input", applyGateMax);
  gateMaxEnabled.addEventListener("change", applyGateMax);

  const multiplexToggle = h("input", { type: "checkbox" }) as HTMLInputElement;
  multiplexToggle.addEventListener("change", () => {
    showMultiplex = multiplexToggle.checked;
    recompute();
  });
  const outlinesToggle = h("input", { type: "checkbox" }) as HTMLInputElement;
  outlinesToggle.checked = showOutlines;
  outlinesToggle.addEventListener("change", () => {
    showOutlines = outlinesToggle.checked;
    recompute();
  });

  const updateButton = h("button", { class: "primary" }, "Update on server") as HTMLButtonElement;
  updateButton.addEventListener("click", async () => {
    updateButton.disabled = true;
    serverNote.textContent = "Updating…";
    try {
      const updated = await withTermsGate(() => api.adjustResult(resultId, params));
      serverNote.textContent =
        `Saved: ${updated.scoring.num_pos}/${updated.scoring.num_total} positive.`;
    } catch (err) {
      serverNote.textContent = describe(err);
    } finally {
      updateButton.disabled = false;
    }
  });

  app().replaceChildren(h("section", { class: "adjust" },
    h("h1", {}, "Interactive adjustment"),
    h("div", { class: "adjust-layout" },
      h("div", { class: "panel" },
        h("h2", {}, "Segmentation"),
        slider("Threshold", 0, 1, 0.005, params.segThreshold,
               (v) => { params.segThreshold = v; }),
        slider("Min size (px²)", 0, 500, 1, params.sizeGateMin,
               (v) => { params.sizeGateMin = v; }),
        h("label", { class: "slider" }, "Max size (px²)",
          gateMaxEnabled, gateMax, gateMaxReadout),
        slider("Marker threshold", 0, 1, 0.005, params.markerThreshold,
               (v) => { params.markerThreshold = v; }),
        h("h2", {}, "View"),
        h("label", {}, multiplexToggle, " Inferred multiplex view"),
        h("label", {}, outlinesToggle, " Segmentation outlines"),
        windowSliders("marker", "Marker (red)"),
        windowSliders("dapi", "DAPI (blue)"),
        windowSliders("lap2", "Lap2 (green)"),
        h("h2", {}, "Live score"),
        liveScoring,
        h("div", { class: "row" }, updateButton, serverNote),
        h("div", { class: "row" },
          h("a", { class: "button", href: api.downloadUrl(resultId) },
            "Download updated results"),
          h("a", { href: `#/results/${resultId}` }, "Back to results"))),
      h("div", { class: "canvas-wrap" }, canvas))));

  recompute();
}

// -------------------------------------------------------------- router

function describe(err: unknown): string {
  if (err instanceof api.ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

export async function route(): Promise<void> {
  const hash = window.location.hash || "#/";
  const [, page, arg] = hash.split("/");
  try {
    if (page === "verify" && arg) renderVerify(arg);
    else if (page === "results" && arg) await renderResults(arg);
    else if (page === "adjust" && arg) await renderAdjust(arg);
    else await renderHome();
  } catch (err) {
    setStatus(describe(err), true);
  }
}

export function start(): void {
  window.addEventListener("hashchange", () => void route());
  void route();
}
