/** Thin client for the amorph service /v1 endpoints. The fetch function is
 * injectable so request construction and response handling are testable
 * without a browser or a live server. */

import {
  AttentionResponse,
  BundleFiles,
  RegionName,
  TransferOutcome,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface TransferParams {
  alpha: number;
  regions?: RegionName[] | null;
  regions2?: RegionName[] | null;
  w?: number;
  grid?: number;
  mode?: string;
}

export interface TransferInput {
  source: BundleFiles;
  ref: BundleFiles;
  ref2?: BundleFiles | null;
  params: TransferParams;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly field?: string,
  ) {
    super(message);
  }
}

function appendBundle(form: FormData, prefix: string, files: BundleFiles): void {
  form.append(`${prefix}_image`, files.image, `${prefix}.png`);
  form.append(`${prefix}_landmarks`, files.landmarks, `${prefix}.json`);
  form.append(`${prefix}_parsing`, files.parsing, `${prefix}_parsing.png`);
}

/** Build the multipart body for /v1/transfer. Exported for tests. */
export function buildTransferForm(input: TransferInput): FormData {
  const form = new FormData();
  appendBundle(form, 'source', input.source);
  appendBundle(form, 'ref', input.ref);
  if (input.ref2) appendBundle(form, 'ref2', input.ref2);
  const params: Record<string, unknown> = { alpha: input.params.alpha };
  if (input.params.regions?.length) params.regions = input.params.regions;
  if (input.ref2 && input.params.regions2?.length) params.regions2 = input.params.regions2;
  if (input.params.w !== undefined) params.w = input.params.w;
  if (input.params.grid !== undefined) params.grid = input.params.grid;
  if (input.params.mode !== undefined) params.mode = input.params.mode;
  form.append('params', JSON.stringify(params));
  return form;
}

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let code = 'http_error';
  let message = `${resp.status}`;
  let field: string | undefined;
  try {
    const body = await resp.json();
    code = body.code ?? code;
    message = body.message ?? message;
    field = body.field;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(resp.status, code, message, field);
}

export class AmorphClient {
  constructor(
    private baseUrl: string = '',
    private fetchFn: FetchLike = fetch.bind(globalThis),
  ) {}

  async transfer(input: TransferInput): Promise<TransferOutcome> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/transfer`, {
      method: 'POST',
      body: buildTransferForm(input),
    });
    await raiseForStatus(resp);
    const coverage = parseFloat(resp.headers.get('X-Amorph-Coverage') ?? '0');
    const blob = await resp.blob();
    return { resultUrl: URL.createObjectURL(blob), coverage };
  }

  async attention(
    source: BundleFiles,
    ref: BundleFiles,
    pixel: [number, number],
    grid = 64,
  ): Promise<AttentionResponse> {
    const form = new FormData();
    appendBundle(form, 'source', source);
    appendBundle(form, 'ref', ref);
    form.append('params', JSON.stringify({ pixel, grid }));
    const resp = await this.fetchFn(`${this.baseUrl}/v1/attention`, {
      method: 'POST',
      body: form,
    });
    await raiseForStatus(resp);
    return (await resp.json()) as AttentionResponse;
  }

  async health(): Promise<{ status: string; version: string }> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/health`);
    await raiseForStatus(resp);
    return resp.json();
  }
}
