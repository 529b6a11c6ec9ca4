/** Canvas helpers: landmark dots, region tints, and the attention heat map
 * blended over the reference preview. Pure functions of their inputs; the
 * canvas context is passed in so they stay testable. */

import { AttentionResponse } from './types.js';

export interface Drawable {
  fillStyle: string | CanvasGradient | CanvasPattern;
  globalAlpha: number;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
}

export function drawLandmarks(
  ctx: Drawable,
  points: [number, number][],
  scale: number,
  color = '#3ddc84',
): void {
  ctx.globalAlpha = 1.0;
  ctx.fillStyle = color;
  for (const [x, y] of points) {
    ctx.beginPath();
    ctx.arc(x * scale, y * scale, 2, 0, Math.PI * 2);
    ctx.fill();
  }
}

/** Map a canvas click to a working-grid pixel. */
export function clickToGridPixel(
  clickX: number,
  clickY: number,
  canvasWidth: number,
  canvasHeight: number,
  grid: number,
): [number, number] {
  const col = Math.min(grid - 1, Math.max(0, Math.floor((clickX / canvasWidth) * grid)));
  const row = Math.min(grid - 1, Math.max(0, Math.floor((clickY / canvasHeight) * grid)));
  return [row, col];
}

/** Paint attention entries as translucent cells over the reference image.
 * Returns the argmax entry so the caller can place a marker on it. */
export function drawAttentionOverlay(
  ctx: Drawable,
  response: AttentionResponse,
  canvasWidth: number,
  canvasHeight: number,
  grid: number,
): [number, number] | null {
  if (response.entries.length === 0) return null;
  const cellW = canvasWidth / grid;
  const cellH = canvasHeight / grid;
  let peak = 0;
  let argmax: [number, number] | null = null;
  for (const [, , w] of response.entries) peak = Math.max(peak, w);
  ctx.fillStyle = '#ff3860';
  for (const [r, c, w] of response.entries) {
    ctx.globalAlpha = 0.85 * (w / peak);
    ctx.fillRect(c * cellW, r * cellH, cellW, cellH);
    if (argmax === null || w > peak - 1e-12) {
      if (w >= peak) argmax = [r, c];
    }
  }
  ctx.globalAlpha = 1.0;
  return argmax;
}

/** Locate the argmax of a sparse attention row. */
export function attentionArgmax(
  response: AttentionResponse,
): [number, number] | null {
  let best: [number, number] | null = null;
  let bestW = -Infinity;
  for (const [r, c, w] of response.entries) {
    if (w > bestW) {
      bestW = w;
      best = [r, c];
    }
  }
  return best;
}

/** RGBA tint colours per parsing label (background, skin, lip, eyes). */
const LABEL_TINTS: [number, number, number, number][] = [
  [0, 0, 0, 0],
  [80, 200, 120, 60],
  [230, 70, 110, 90],
  [80, 140, 255, 90],
];

/** Translucent RGBA buffer visualising a parsing map; background stays
 * transparent so only face regions are tinted. */
export function labelsToTintRgba(labels: Uint8Array | number[]): Uint8ClampedArray {
  const out = new Uint8ClampedArray(labels.length * 4);
  for (let i = 0; i < labels.length; i++) {
    const tint = LABEL_TINTS[labels[i]] ?? LABEL_TINTS[0];
    out[i * 4] = tint[0];
    out[i * 4 + 1] = tint[1];
    out[i * 4 + 2] = tint[2];
    out[i * 4 + 3] = tint[3];
  }
  return out;
}
