/** Stick-figure rendering of one motion frame onto a canvas. */

import {
  SkeletonDef,
  ViewPlane,
  bones,
  forwardKinematics,
  project,
} from "./fk.js";

export interface RenderOptions {
  view: ViewPlane;
  scale: number; // pixels per length unit
  highlight: Set<number>; // joint indices drawn emphasized
}

export function renderSkeleton(
  ctx: CanvasRenderingContext2D,
  skeleton: SkeletonDef,
  frame: number[][] | null,
  options: RenderOptions,
): void {
  const width = ctx.canvas.width;
  const height = ctx.canvas.height;
  ctx.clearRect(0, 0, width, height);
  if (!frame) {
    ctx.fillStyle = "#999";
    ctx.font = "13px sans-serif";
    ctx.fillText("no motion loaded", width / 2 - 50, height / 2);
    return;
  }
  const positions = forwardKinematics(skeleton, frame);
  const flat = project(positions, options.view);
  const cx = width / 2;
  const cy = height * 0.7;
  const toScreen = (p: [number, number]): [number, number] => [
    cx + p[0] * options.scale,
    cy + p[1] * options.scale,
  ];

  ctx.strokeStyle = "#444";
  ctx.lineWidth = 2;
  for (const [a, b] of bones(skeleton)) {
    const [ax, ay] = toScreen(flat[a]);
    const [bx, by] = toScreen(flat[b]);
    ctx.beginPath();
    ctx.moveTo(ax, ay);
    ctx.lineTo(bx, by);
    ctx.stroke();
  }
  flat.forEach((p, i) => {
    const [x, y] = toScreen(p);
    ctx.beginPath();
    ctx.fillStyle = options.highlight.has(i) ? "#dc2626" : "#2563eb";
    ctx.arc(x, y, options.highlight.has(i) ? 5 : 3, 0, 2 * Math.PI);
    ctx.fill();
  });
}
