/** UI state container. All mutations funnel through methods that preserve
 * the invariants: alpha stays in [0, 1], two-reference region selections
 * never overlap, and controls are disabled while a request is in flight. */

import {
  BundleSlot,
  LoadedBundle,
  RegionName,
  SweepThumb,
  TransferOutcome,
  UiState,
  initialState,
} from './types.js';

export interface ViewModel {
  controlsDisabled: boolean;
  canTransfer: boolean;
  twoReferenceMode: boolean;
  alpha: number;
  regions: Record<'ref' | 'ref2', RegionName[]>;
  resultUrl: string | null;
  coverageBadge: string | null;
  sweep: SweepThumb[];
  error: string | null;
}

export class UiStore {
  state: UiState = initialState();
  private listeners: Array<(s: UiState) => void> = [];

  subscribe(fn: (s: UiState) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  setBundle(slot: BundleSlot, bundle: LoadedBundle | undefined): void {
    if (bundle === undefined) {
      delete this.state.bundles[slot];
      if (slot === 'ref2') this.state.regions.ref2 = new Set();
    } else {
      this.state.bundles[slot] = bundle;
    }
    this.state.result = null;
    this.state.sweep = [];
    this.emit();
  }

  setSweep(thumbs: SweepThumb[]): void {
    this.state.sweep = thumbs;
    this.emit();
  }

  setAlpha(alpha: number): void {
    this.state.alpha = Math.min(1, Math.max(0, alpha));
    this.emit();
  }

  /** Toggle a region for one reference. Enabling a region on one reference
   * always removes it from the other, so the Eq.-of-partial-masks
   * disjointness can never be violated from the UI. */
  toggleRegion(ref: 'ref' | 'ref2', region: RegionName): void {
    const mine = this.state.regions[ref];
    const other = this.state.regions[ref === 'ref' ? 'ref2' : 'ref'];
    if (mine.has(region)) {
      mine.delete(region);
    } else {
      mine.add(region);
      other.delete(region);
    }
    this.emit();
  }

  setInFlight(flag: boolean): void {
    this.state.requestInFlight = flag;
    this.emit();
  }

  setResult(result: TransferOutcome): void {
    this.state.result = result;
    this.state.error = null;
    this.emit();
  }

  setError(message: string | null): void {
    this.state.error = message;
    this.emit();
  }

  setInspectionPixel(pixel: [number, number] | null): void {
    this.state.inspectionPixel = pixel;
    this.emit();
  }

  /** Pure projection of state for rendering; snapshot-testable. */
  viewModel(): ViewModel {
    const s = this.state;
    const haveInputs = Boolean(s.bundles.source && s.bundles.ref);
    const twoRefs = Boolean(s.bundles.ref2);
    return {
      controlsDisabled: s.requestInFlight,
      canTransfer: haveInputs && !s.requestInFlight,
      twoReferenceMode: twoRefs,
      alpha: s.alpha,
      regions: {
        ref: [...s.regions.ref].sort(),
        ref2: [...s.regions.ref2].sort(),
      },
      resultUrl: s.result ? s.result.resultUrl : null,
      coverageBadge: s.result ? `coverage ${(s.result.coverage * 100).toFixed(1)}%` : null,
      sweep: [...s.sweep],
      error: s.error,
    };
  }
}

export function regionsOverlap(a: Set<RegionName>, b: Set<RegionName>): boolean {
  for (const r of a) if (b.has(r)) return true;
  return false;
}
