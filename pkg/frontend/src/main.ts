/** Browser wiring: file pickers, canvas click handling, predict button.
 *
 * All logic lives in state.ts / api.ts / render.ts / export.ts; this file
 * only moves data between the DOM and those modules.
 */

import { ApiClient } from "./api.js";
import { toAnnotationFile } from "./export.js";
import { drawMarkers, markersForPrediction } from "./render.js";
import { AnnotatorStore } from "./state.js";

const store = new AnnotatorStore();
const api = new ApiClient(
  (window as { POSEMATCH_URL?: string }).POSEMATCH_URL ?? "",
);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const supportCanvas = el<HTMLCanvasElement>("support-canvas");
const queryCanvas = el<HTMLCanvasElement>("query-canvas");
const statusLine = el<HTMLDivElement>("status");
let activeSupport = -1;
let queryImage: { base64: string; bitmap: ImageBitmap } | null = null;

function setStatus(text: string): void {
  statusLine.textContent = text;
}

async function fileToBase64(file: File): Promise<string> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  bytes.forEach((b) => (binary += String.fromCharCode(b)));
  return btoa(binary);
}

function redrawSupport(): void {
  if (activeSupport < 0) return;
  const support = store.supports[activeSupport];
  if (!support) return;
  const ctx = supportCanvas.getContext("2d")!;
  const img = new Image();
  img.onload = () => {
    supportCanvas.width = support.width;
    supportCanvas.height = support.height;
    ctx.drawImage(img, 0, 0);
    const placed = support.keypoints
      .map((p, i) =>
        p ? { x: p.x, y: p.y, confidence: 1 } : null,
      )
      .filter((p): p is NonNullable<typeof p> => p !== null);
    drawMarkers(ctx, markersForPrediction(placed, store.keypointNames));
  };
  img.src = `data:image/png;base64,${support.image}`;
}

store.subscribe(redrawSupport);

el<HTMLInputElement>("keypoint-names").addEventListener("change", (event) => {
  const value = (event.target as HTMLInputElement).value;
  const names = value
    .split(",")
    .map((n) => n.trim())
    .filter((n) => n.length > 0);
  if (names.length > 0) store.setKeypointNames(names);
});

el<HTMLInputElement>("support-file").addEventListener("change", async (event) => {
  const file = (event.target as HTMLInputElement).files?.[0];
  if (!file) return;
  const base64 = await fileToBase64(file);
  const bitmap = await createImageBitmap(file);
  activeSupport = store.addSupport(base64, bitmap.width, bitmap.height);
  setStatus(`support ${activeSupport}: click to place "${store.keypointNames[0]}"`);
});

supportCanvas.addEventListener("click", (event) => {
  if (activeSupport < 0) return;
  const next = store.nextUnplaced(activeSupport);
  if (next < 0) {
    setStatus("all keypoints placed; pick one from the list to move it");
    return;
  }
  const rect = supportCanvas.getBoundingClientRect();
  store.setKeypoint(activeSupport, next, {
    x: event.clientX - rect.left,
    y: event.clientY - rect.top,
  });
  const following = store.nextUnplaced(activeSupport);
  setStatus(
    following < 0
      ? "support fully annotated"
      : `click to place "${store.keypointNames[following]}"`,
  );
});

el<HTMLInputElement>("query-file").addEventListener("change", async (event) => {
  const file = (event.target as HTMLInputElement).files?.[0];
  if (!file) return;
  const base64 = await fileToBase64(file);
  const bitmap = await createImageBitmap(file);
  queryImage = { base64, bitmap };
  queryCanvas.width = bitmap.width;
  queryCanvas.height = bitmap.height;
  queryCanvas.getContext("2d")!.drawImage(bitmap, 0, 0);
});

el<HTMLButtonElement>("predict").addEventListener("click", async () => {
  if (!queryImage) {
    setStatus("load a query image first");
    return;
  }
  try {
    if (store.sessionId === null) {
      const info = await api.registerSupport(store.toRegistration());
      store.sessionId = info.session_id;
    }
    const prediction = await api.predict(store.sessionId, queryImage.base64);
    const ctx = queryCanvas.getContext("2d")!;
    ctx.drawImage(queryImage.bitmap, 0, 0);
    const threshold = Number(el<HTMLInputElement>("confidence").value) || 0;
    drawMarkers(
      ctx,
      markersForPrediction(prediction.keypoints, store.keypointNames, {
        minConfidence: threshold,
      }),
    );
    setStatus(`predicted in ${prediction.timing_ms.toFixed(0)} ms`);
  } catch (err) {
    setStatus(`prediction failed: ${(err as Error).message}`);
  }
});

el<HTMLButtonElement>("export").addEventListener("click", () => {
  const file = toAnnotationFile(
    store.categoryName,
    store.keypointNames,
    store.supports,
    store.supports.map((_, i) => `support_${i}.png`),
  );
  const blob = new Blob([JSON.stringify(file, null, 1)], {
    type: "application/json",
  });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "annotations.json";
  link.click();
});
