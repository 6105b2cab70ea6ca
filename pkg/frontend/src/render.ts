/** Pure marker layout for prediction overlays.
 *
 * Turning predictions into draw instructions (instead of drawing directly)
 * keeps the overlay logic testable without a canvas; main.ts replays the
 * instructions onto a 2d context.
 */

import type { PredictedKeypoint } from "./types.js";

export interface Marker {
  x: number;
  y: number;
  label: string;
  confidence: number;
  /** low-confidence markers render hollow as a visual warning */
  solid: boolean;
}

export interface RenderOptions {
  /** markers below this confidence are dropped entirely */
  minConfidence?: number;
  /** markers below this render hollow instead of solid */
  solidConfidence?: number;
  /** scale from model pixel space to canvas space */
  scale?: number;
}

export function markersForPrediction(
  keypoints: PredictedKeypoint[],
  names: string[],
  options: RenderOptions = {},
): Marker[] {
  const minConfidence = options.minConfidence ?? 0;
  const solidConfidence = options.solidConfidence ?? 0.25;
  const scale = options.scale ?? 1;
  const markers: Marker[] = [];
  keypoints.forEach((kp, index) => {
    if (kp.confidence < minConfidence) return;
    markers.push({
      x: kp.x * scale,
      y: kp.y * scale,
      label: names[index] ?? `kp_${index}`,
      confidence: kp.confidence,
      solid: kp.confidence >= solidConfidence,
    });
  });
  return markers;
}

/** Draw markers onto a canvas 2d context (browser-only). */
export function drawMarkers(
  ctx: CanvasRenderingContext2D,
  markers: Marker[],
): void {
  for (const marker of markers) {
    ctx.beginPath();
    ctx.arc(marker.x, marker.y, 5, 0, 2 * Math.PI);
    ctx.strokeStyle = "#ff3355";
    ctx.lineWidth = 2;
    if (marker.solid) {
      ctx.fillStyle = "rgba(255, 51, 85, 0.85)";
      ctx.fill();
    }
    ctx.stroke();
    ctx.font = "12px sans-serif";
    ctx.fillStyle = "#ffffff";
    ctx.strokeStyle = "#000000";
    ctx.lineWidth = 3;
    ctx.strokeText(marker.label, marker.x + 8, marker.y - 8);
    ctx.fillText(marker.label, marker.x + 8, marker.y - 8);
  }
}
