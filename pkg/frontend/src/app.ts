/** DOM wiring for the control UI. All decisions live in the store, the
 * scheduler and the api client; this class only moves data between them and
 * the document. */

import { AmorphClient, ApiError, TransferInput } from './api.js';
import { RequestScheduler } from './scheduler.js';
import { UiStore } from './state.js';
import {
  BundleFiles,
  BundleSlot,
  LoadedBundle,
  REGION_NAMES,
  RegionName,
  TransferOutcome,
} from './types.js';
import {
  attentionArgmax,
  clickToGridPixel,
  drawAttentionOverlay,
  drawLandmarks,
  labelsToTintRgba,
} from './overlay.js';
import { validateAlpha, validateLandmarks, validateParsingLabels } from './validate.js';

const SWEEP_ALPHAS = [0, 0.25, 0.5, 0.75, 1];

const GRID = 64;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function decodeParsingLabels(blob: Blob): Promise<Uint8Array> {
  const bitmap = await createImageBitmap(blob);
  const canvas = document.createElement('canvas');
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext('2d')!;
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  const labels = new Uint8Array(bitmap.width * bitmap.height);
  for (let i = 0; i < labels.length; i++) labels[i] = data[i * 4]; // grayscale
  return labels;
}

export class App {
  private store = new UiStore();
  private client: AmorphClient;
  private transferScheduler: RequestScheduler<TransferOutcome>;

  constructor(baseUrl = '') {
    this.client = new AmorphClient(baseUrl);
    this.transferScheduler = new RequestScheduler({
      run: () => {
        this.store.setInFlight(true);
        return this.client.transfer(this.buildInput());
      },
      apply: (outcome) => {
        this.store.setInFlight(false);
        this.store.setResult(outcome);
      },
      fail: (error) => {
        this.store.setInFlight(false);
        this.store.setError(error instanceof ApiError ? error.message : String(error));
      },
    });
  }

  mount(): void {
    this.store.subscribe(() => this.render());

    for (const slot of ['source', 'ref', 'ref2'] as BundleSlot[]) {
      el<HTMLInputElement>(`${slot}-files`).addEventListener('change', (ev) => {
        const input = ev.target as HTMLInputElement;
        if (input.files) void this.loadBundle(slot, input.files);
      });
    }
    el<HTMLButtonElement>('demo-btn').addEventListener('click', () => void this.loadDemo());

    const slider = el<HTMLInputElement>('alpha');
    slider.addEventListener('input', () => {
      this.store.setAlpha(parseFloat(slider.value));
      if (this.store.viewModel().canTransfer) this.transferScheduler.request();
    });

    for (const ref of ['ref', 'ref2'] as const) {
      for (const region of REGION_NAMES) {
        el<HTMLInputElement>(`${ref}-${region}`).addEventListener('change', () => {
          this.store.toggleRegion(ref, region);
        });
      }
    }

    el<HTMLButtonElement>('transfer-btn').addEventListener('click', () => {
      if (this.store.viewModel().canTransfer) this.transferScheduler.fire();
    });

    el<HTMLButtonElement>('sweep-btn').addEventListener('click', () => {
      if (this.store.viewModel().canTransfer) void this.runSweep();
    });

    el<HTMLCanvasElement>('source-canvas').addEventListener('click', (ev) => {
      const canvas = ev.target as HTMLCanvasElement;
      const rect = canvas.getBoundingClientRect();
      const pixel = clickToGridPixel(
        ev.clientX - rect.left, ev.clientY - rect.top, rect.width, rect.height, GRID,
      );
      this.store.setInspectionPixel(pixel);
      void this.inspectAttention(pixel);
    });

    this.render();
  }

  private bundleFiles(slot: BundleSlot): BundleFiles | null {
    const bundle = this.store.state.bundles[slot];
    return bundle ? bundle.files : null;
  }

  private buildInput(): TransferInput {
    const source = this.bundleFiles('source');
    const ref = this.bundleFiles('ref');
    if (!source || !ref) throw new Error('source and reference bundles are required');
    const ref2 = this.bundleFiles('ref2');
    const vm = this.store.viewModel();
    const alphaCheck = validateAlpha(vm.alpha);
    if (!alphaCheck.ok) throw new Error(alphaCheck.message);
    return {
      source,
      ref,
      ref2,
      params: {
        alpha: vm.alpha,
        regions: vm.regions.ref as RegionName[],
        regions2: ref2 ? (vm.regions.ref2 as RegionName[]) : null,
        grid: GRID,
      },
    };
  }

  private async loadBundle(slot: BundleSlot, files: FileList): Promise<void> {
    const byName: Record<string, File> = {};
    for (const f of Array.from(files)) {
      if (f.name.endsWith('.json')) byName.landmarks = f;
      else if (f.name.includes('pars')) byName.parsing = f;
      else byName.image = f;
    }
    if (!byName.image || !byName.landmarks || !byName.parsing) {
      this.store.setError('select image.png, landmarks.json and parsing.png together');
      return;
    }
    try {
      const bitmap = await createImageBitmap(byName.image);
      const landmarks = JSON.parse(await byName.landmarks.text());
      const lmCheck = validateLandmarks(landmarks, bitmap.width, bitmap.height);
      if (!lmCheck.ok) throw new Error(lmCheck.message);
      const labels = await decodeParsingLabels(byName.parsing);
      const parCheck = validateParsingLabels(labels);
      if (!parCheck.ok) throw new Error(parCheck.message);
      const bundle: LoadedBundle = {
        files: { image: byName.image, landmarks: byName.landmarks, parsing: byName.parsing },
        landmarks,
        parsingLabels: labels,
        parsingWidth: bitmap.width,
        previewUrl: URL.createObjectURL(byName.image),
        width: bitmap.width,
        height: bitmap.height,
      };
      this.store.setError(null);
      this.store.setBundle(slot, bundle);
    } catch (error) {
      this.store.setError(`${slot}: ${error instanceof Error ? error.message : error}`);
    }
  }

  private async loadDemo(): Promise<void> {
    try {
      const specs: Array<[BundleSlot, number, string]> = [
        ['source', 1, '0.75,0.55,0.50'],
        ['ref', 2, '0.75,0.10,0.20'],
      ];
      for (const [slot, seed, lip] of specs) {
        const resp = await fetch(`/v1/demo/${seed}?lip=${lip}`);
        if (!resp.ok) throw new Error(`demo fetch failed (${resp.status})`);
        const doc = await resp.json();
        const image = b64ToBlob(doc.image_png_base64, 'image/png');
        const parsing = b64ToBlob(doc.parsing_png_base64, 'image/png');
        const landmarks = new Blob([JSON.stringify(doc.landmarks)], { type: 'application/json' });
        const labels = await decodeParsingLabels(parsing);
        const bundle: LoadedBundle = {
          files: { image, landmarks, parsing },
          landmarks: doc.landmarks,
          parsingLabels: labels,
          parsingWidth: doc.width,
          previewUrl: URL.createObjectURL(image),
          width: doc.width,
          height: doc.height,
        };
        this.store.setBundle(slot, bundle);
      }
      this.store.setError(null);
    } catch (error) {
      this.store.setError(String(error));
    }
  }

  /** Fill the thumbnail strip with the shade sweep (the five canonical
   * alphas), reusing the server's reference cache between calls. */
  private async runSweep(): Promise<void> {
    const base = this.buildInput();
    this.store.setInFlight(true);
    try {
      const thumbs = [];
      for (const alpha of SWEEP_ALPHAS) {
        const outcome = await this.client.transfer({
          ...base,
          params: { ...base.params, alpha },
        });
        thumbs.push({ alpha, url: outcome.resultUrl });
      }
      this.store.setSweep(thumbs);
    } catch (error) {
      this.store.setError(error instanceof ApiError ? error.message : String(error));
    } finally {
      this.store.setInFlight(false);
    }
  }

  private async inspectAttention(pixel: [number, number]): Promise<void> {
    const source = this.bundleFiles('source');
    const ref = this.bundleFiles('ref');
    if (!source || !ref) return;
    try {
      const doc = await this.client.attention(source, ref, pixel, GRID);
      const notice = el<HTMLElement>('attention-notice');
      if (doc.background) {
        notice.textContent = 'no attention (background pixel)';
      } else {
        const peak = attentionArgmax(doc);
        notice.textContent = peak
          ? `argmax at reference cell (${peak[0]}, ${peak[1]})`
          : 'empty attention row';
      }
      this.drawReference(doc);
    } catch (error) {
      this.store.setError(error instanceof ApiError ? error.message : String(error));
    }
  }

  private drawReference(attention?: import('./types.js').AttentionResponse): void {
    const bundle = this.store.state.bundles.ref;
    const canvas = el<HTMLCanvasElement>('ref-canvas');
    const ctx = canvas.getContext('2d');
    if (!bundle || !ctx) return;
    const img = new Image();
    img.onload = () => {
      ctx.globalAlpha = 1;
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
      if (attention) {
        drawAttentionOverlay(ctx, attention, canvas.width, canvas.height, GRID);
      }
    };
    img.src = bundle.previewUrl;
  }

  private drawSource(): void {
    const bundle = this.store.state.bundles.source;
    const canvas = el<HTMLCanvasElement>('source-canvas');
    const ctx = canvas.getContext('2d');
    if (!bundle || !ctx) return;
    const img = new Image();
    img.onload = () => {
      ctx.globalAlpha = 1;
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
      if (bundle.parsingLabels) {
        const w = bundle.parsingWidth;
        const h = bundle.parsingLabels.length / w;
        const tint = document.createElement('canvas');
        tint.width = w;
        tint.height = h;
        const tctx = tint.getContext('2d')!;
        const tintData = tctx.createImageData(w, h);
        tintData.data.set(labelsToTintRgba(bundle.parsingLabels));
        tctx.putImageData(tintData, 0, 0);
        ctx.drawImage(tint, 0, 0, canvas.width, canvas.height);
      }
      drawLandmarks(ctx, bundle.landmarks, canvas.width / bundle.width);
    };
    img.src = bundle.previewUrl;
  }

  private render(): void {
    const vm = this.store.viewModel();
    el<HTMLInputElement>('alpha').disabled = vm.controlsDisabled;
    el<HTMLButtonElement>('transfer-btn').disabled = !vm.canTransfer;
    el<HTMLElement>('alpha-value').textContent = vm.alpha.toFixed(2);
    for (const ref of ['ref', 'ref2'] as const) {
      for (const region of REGION_NAMES) {
        const box = el<HTMLInputElement>(`${ref}-${region}`);
        box.checked = vm.regions[ref].includes(region);
        box.disabled = vm.controlsDisabled || (ref === 'ref2' && !vm.twoReferenceMode);
      }
    }
    const result = el<HTMLImageElement>('result-img');
    if (vm.resultUrl) result.src = vm.resultUrl;
    el<HTMLElement>('coverage-badge').textContent = vm.coverageBadge ?? '';
    el<HTMLButtonElement>('sweep-btn').disabled = !vm.canTransfer;
    const strip = el<HTMLElement>('sweep-strip');
    strip.replaceChildren(
      ...vm.sweep.map((thumb) => {
        const fig = document.createElement('figure');
        const img = document.createElement('img');
        img.src = thumb.url;
        img.width = 72;
        img.height = 72;
        const cap = document.createElement('figcaption');
        cap.textContent = `α=${thumb.alpha}`;
        fig.append(img, cap);
        return fig;
      }),
    );
    const error = el<HTMLElement>('error-box');
    error.textContent = vm.error ?? '';
    error.style.display = vm.error ? 'block' : 'none';
    this.drawSource();
    this.drawReference();
  }
}

function b64ToBlob(b64: string, type: string): Blob {
  const bytes = atob(b64);
  const arr = new Uint8Array(bytes.length);
  for (let i = 0; i < bytes.length; i++) arr[i] = bytes.charCodeAt(i);
  return new Blob([arr], { type });
}
