/** Loss-curve chart: pure series math plus a small canvas renderer. */

import type { TraceRecord } from "./api.js";

export interface ChartLayout {
  width: number;
  height: number;
  margin: number;
}

export interface PlottedPoint {
  x: number;
  y: number;
  step: number;
  value: number;
}

/** Map trace records to canvas coordinates; y axis spans [0, max(1, data)]. */
export function layoutCurve(
  records: TraceRecord[],
  layout: ChartLayout,
): PlottedPoint[] {
  if (records.length === 0) return [];
  const { width, height, margin } = layout;
  const maxStep = Math.max(1, ...records.map((r) => r.step));
  const maxVal = Math.max(1, ...records.map((r) => r.relative_loss));
  const spanX = width - 2 * margin;
  const spanY = height - 2 * margin;
  return records.map((r) => ({
    x: margin + (r.step / maxStep) * spanX,
    y: height - margin - (r.relative_loss / maxVal) * spanY,
    step: r.step,
    value: r.relative_loss,
  }));
}

export function drawCurve(
  ctx: CanvasRenderingContext2D,
  records: TraceRecord[],
  layout: ChartLayout,
): void {
  const { width, height, margin } = layout;
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(margin, margin, width - 2 * margin, height - 2 * margin);
  const points = layoutCurve(records, layout);
  if (points.length === 0) return;
  ctx.strokeStyle = "#2563eb";
  ctx.lineWidth = 2;
  ctx.beginPath();
  points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
  ctx.stroke();
  ctx.fillStyle = "#2563eb";
  for (const p of points) {
    ctx.beginPath();
    ctx.arc(p.x, p.y, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  const last = points[points.length - 1];
  ctx.fillText(`s=${last.step}: ${last.value.toFixed(3)}`, last.x - 40, last.y - 8);
}
