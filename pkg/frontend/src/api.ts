/** Thin fetch wrappers for the web-app HTTP routes (same origin). */

import type { PostprocessParams, Scoring } from "./types.js";
import { paramsToQuery } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let code = "internal";
  let message = `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    code = body.error ?? code;
    message = body.message ?? message;
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(resp.status, code, message);
}

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url, { headers: { Accept: "application/json" } });
  if (!resp.ok) throw await parseError(resp);
  return resp.json() as Promise<T>;
}

async function postJson<T>(url: string, body?: unknown): Promise<T> {
  const resp = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json", Accept: "application/json" },
    body: JSON.stringify(body ?? {}),
  });
  if (!resp.ok) throw await parseError(resp);
  if (resp.status === 204) return undefined as T;
  return resp.json() as Promise<T>;
}

export interface UploadResponse {
  upload_id: string;
  thumbnail: string;
  width: number;
  height: number;
}

export interface ProcessResponse {
  result_id: string;
  thumbnails: Record<string, string>;
  scoring: Scoring;
}

export interface ResultPage {
  result_id: string;
  resolution: string;
  params: Record<string, number | null>;
  scoring: Scoring;
  thumbnails: Record<string, string>;
}

export async function fetchTerms(): Promise<{ terms: string; accepted: boolean }> {
  return getJson("/terms");
}

export async function acceptTerms(): Promise<void> {
  await postJson("/terms/accept");
}

export async function uploadImage(file: File | Blob): Promise<UploadResponse> {
  const form = new FormData();
  form.append("img", file);
  const resp = await fetch("/upload", { method: "POST", body: form,
                                        headers: { Accept: "application/json" } });
  if (!resp.ok) throw await parseError(resp);
  return resp.json();
}

export async function listSamples(): Promise<string[]> {
  const body = await getJson<{ samples: string[] }>("/samples");
  return body.samples;
}

export async function uploadSample(name: string): Promise<UploadResponse> {
  return getJson(`/sample/${encodeURIComponent(name)}`);
}

export async function processUpload(uploadId: string,
                                    resolution: string): Promise<ProcessResponse> {
  return postJson("/process", { upload_id: uploadId, resolution });
}

export async function fetchResult(resultId: string): Promise<ResultPage> {
  return getJson(`/results/${encodeURIComponent(resultId)}`);
}

export async function adjustResult(resultId: string, params: PostprocessParams):
    Promise<{ scoring: Scoring; thumbnails: Record<string, string> }> {
  return postJson(`/adjust/${encodeURIComponent(resultId)}`, paramsToQuery(params));
}

export async function sendFeedback(resultId: string, text: string): Promise<void> {
  await postJson(`/feedback/${encodeURIComponent(resultId)}`, { text });
}

export function resultImageUrl(resultId: string, name: string): string {
  return `/results/${encodeURIComponent(resultId)}/image/${encodeURIComponent(name)}`;
}

export function downloadUrl(resultId: string): string {
  return `/download/${encodeURIComponent(resultId)}.zip`;
}

/** Draw an image URL onto an offscreen canvas and return its pixels. */
export async function fetchImagePixels(url: string, width?: number, height?: number):
    Promise<{ data: Uint8ClampedArray; width: number; height: number }> {
  const resp = await fetch(url);
  if (!resp.ok) throw await parseError(resp);
  const bitmap = await createImageBitmap(await resp.blob());
  const w = width ?? bitmap.width;
  const h = height ?? bitmap.height;
  const canvas = document.createElement("canvas");
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unavailable");
  ctx.imageSmoothingEnabled = w !== bitmap.width || h !== bitmap.height;
  ctx.drawImage(bitmap, 0, 0, w, h);
  bitmap.close();
  return { data: ctx.getImageData(0, 0, w, h).data, width: w, height: h };
}
