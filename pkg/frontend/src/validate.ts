/** Client-side bundle validation mirroring the server's rules, so the UI
 * never submits a request the server would reject. */

export interface ValidationResult {
  ok: boolean;
  message?: string;
}

const LANDMARK_COUNT = 68;
const VALID_LABELS = new Set([0, 1, 2, 3]);

/** Landmarks must be exactly 68 finite [x, y] pairs inside image bounds. */
export function validateLandmarks(
  data: unknown,
  width: number,
  height: number,
): ValidationResult {
  if (!Array.isArray(data)) {
    return { ok: false, message: 'landmarks file is not a JSON array' };
  }
  if (data.length !== LANDMARK_COUNT) {
    return {
      ok: false,
      message: `landmark count must be ${LANDMARK_COUNT}, got ${data.length}`,
    };
  }
  for (let i = 0; i < data.length; i++) {
    const pt = data[i];
    if (!Array.isArray(pt) || pt.length !== 2 ||
        typeof pt[0] !== 'number' || typeof pt[1] !== 'number' ||
        !Number.isFinite(pt[0]) || !Number.isFinite(pt[1])) {
      return { ok: false, message: `landmark ${i} is not an [x, y] number pair` };
    }
    const [x, y] = pt;
    if (x < 0 || y < 0 || x > width - 1 || y > height - 1) {
      return {
        ok: false,
        message: `landmark ${i} (${x}, ${y}) is outside the ${width}x${height} image`,
      };
    }
  }
  return { ok: true };
}

/** Parsing labels must be in {0, 1, 2, 3} with at least one face pixel. */
export function validateParsingLabels(labels: Uint8Array | number[]): ValidationResult {
  let facePixels = 0;
  for (let i = 0; i < labels.length; i++) {
    const v = labels[i];
    if (!VALID_LABELS.has(v)) {
      return { ok: false, message: `unknown parsing label ${v} at pixel ${i}` };
    }
    if (v !== 0) facePixels++;
  }
  if (facePixels === 0) {
    return { ok: false, message: 'parsing map has no face pixels' };
  }
  return { ok: true };
}

/** Alpha must sit in [0, 1]; the slider enforces this but mirror it anyway. */
export function validateAlpha(alpha: number): ValidationResult {
  if (!Number.isFinite(alpha) || alpha < 0 || alpha > 1) {
    return { ok: false, message: `alpha must be in [0, 1], got ${alpha}` };
  }
  return { ok: true };
}
