/** Shared types for the amorph control UI. */

export type RegionName = 'lip' | 'skin' | 'eyes';

export const REGION_NAMES: RegionName[] = ['lip', 'skin', 'eyes'];

/** Parsing map labels used by the server. */
export const LABEL_BACKGROUND = 0;
export const LABEL_SKIN = 1;
export const LABEL_LIP = 2;
export const LABEL_EYES = 3;

export interface BundleFiles {
  image: Blob;
  landmarks: Blob;
  parsing: Blob;
}

export interface LoadedBundle {
  files: BundleFiles;
  landmarks: [number, number][];
  /** decoded parsing labels, row-major, for preview tinting */
  parsingLabels: Uint8Array | null;
  parsingWidth: number;
  /** object URL of the preview image */
  previewUrl: string;
  width: number;
  height: number;
}

export type BundleSlot = 'source' | 'ref' | 'ref2';

export interface AttentionEntry {
  row: number;
  col: number;
  weight: number;
}

export interface AttentionResponse {
  pixel: [number, number];
  entries: [number, number, number][];
  background: boolean;
  heatmap_png_base64: string;
}

export interface TransferOutcome {
  /** object URL of the result PNG */
  resultUrl: string;
  coverage: number;
}

export interface SweepThumb {
  alpha: number;
  url: string;
}

export interface UiState {
  bundles: Partial<Record<BundleSlot, LoadedBundle>>;
  alpha: number;
  /** per-reference region toggles; disjoint across the two refs by invariant */
  regions: Record<'ref' | 'ref2', Set<RegionName>>;
  inspectionPixel: [number, number] | null;
  result: TransferOutcome | null;
  /** cached thumbnails for the alpha in {0, .25, .5, .75, 1} sweep strip */
  sweep: SweepThumb[];
  requestInFlight: boolean;
  error: string | null;
}

export function initialState(): UiState {
  return {
    bundles: {},
    alpha: 1.0,
    regions: { ref: new Set(REGION_NAMES), ref2: new Set() },
    inspectionPixel: null,
    result: null,
    sweep: [],
    requestInFlight: false,
    error: null,
  };
}
