import { describe, expect, it } from 'vitest';

import { validateAlpha, validateLandmarks, validateParsingLabels } from '../src/validate.js';

function points(n: number): [number, number][] {
  return Array.from({ length: n }, (_, i) => [10 + i, 20 + i] as [number, number]);
}

describe('validateLandmarks', () => {
  it('accepts 68 in-bounds pairs', () => {
    expect(validateLandmarks(points(68), 256, 256).ok).toBe(true);
  });

  it('rejects wrong counts', () => {
    const result = validateLandmarks(points(67), 256, 256);
    expect(result.ok).toBe(false);
    expect(result.message).toContain('68');
  });

  it('rejects out-of-bounds points', () => {
    const pts = points(68);
    pts[12] = [300, 10];
    const result = validateLandmarks(pts, 256, 256);
    expect(result.ok).toBe(false);
    expect(result.message).toContain('12');
  });

  it('rejects non-numeric entries', () => {
    const pts: unknown[] = points(68);
    pts[3] = ['a', 'b'];
    expect(validateLandmarks(pts, 256, 256).ok).toBe(false);
  });
});

describe('validateParsingLabels', () => {
  it('accepts the four region labels', () => {
    expect(validateParsingLabels(new Uint8Array([0, 1, 2, 3, 1, 1])).ok).toBe(true);
  });

  it('rejects unknown labels', () => {
    const result = validateParsingLabels(new Uint8Array([0, 1, 7]));
    expect(result.ok).toBe(false);
    expect(result.message).toContain('7');
  });

  it('rejects an all-background map', () => {
    expect(validateParsingLabels(new Uint8Array(16)).ok).toBe(false);
  });
});

describe('validateAlpha', () => {
  it('accepts the closed unit interval', () => {
    expect(validateAlpha(0).ok).toBe(true);
    expect(validateAlpha(1).ok).toBe(true);
    expect(validateAlpha(0.4).ok).toBe(true);
  });

  it('rejects out-of-range and non-finite values', () => {
    expect(validateAlpha(1.2).ok).toBe(false);
    expect(validateAlpha(NaN).ok).toBe(false);
  });
});
