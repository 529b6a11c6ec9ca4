import { describe, expect, it } from 'vitest';

import { AmorphClient, ApiError, buildTransferForm } from '../src/api.js';
import { BundleFiles } from '../src/types.js';

function files(): BundleFiles {
  return {
    image: new Blob(['img'], { type: 'image/png' }),
    landmarks: new Blob(['[]'], { type: 'application/json' }),
    parsing: new Blob(['par'], { type: 'image/png' }),
  };
}

describe('buildTransferForm', () => {
  it('carries both bundles and the params JSON', () => {
    const form = buildTransferForm({
      source: files(),
      ref: files(),
      params: { alpha: 0.5, regions: ['lip'] },
    });
    const params = JSON.parse(form.get('params') as string);
    expect(params).toEqual({ alpha: 0.5, regions: ['lip'] });
    expect(form.get('source_image')).toBeInstanceOf(Blob);
    expect(form.get('ref_parsing')).toBeInstanceOf(Blob);
    expect(form.get('ref2_image')).toBeNull();
  });

  it('only sends regions2 when a second reference exists', () => {
    const withTwo = buildTransferForm({
      source: files(),
      ref: files(),
      ref2: files(),
      params: { alpha: 1, regions: ['lip'], regions2: ['skin', 'eyes'] },
    });
    expect(JSON.parse(withTwo.get('params') as string).regions2).toEqual(['skin', 'eyes']);
    const withOne = buildTransferForm({
      source: files(),
      ref: files(),
      params: { alpha: 1, regions: ['lip'], regions2: ['skin'] },
    });
    expect(JSON.parse(withOne.get('params') as string).regions2).toBeUndefined();
  });
});

describe('AmorphClient', () => {
  it('surfaces the error envelope as ApiError', async () => {
    const client = new AmorphClient('', async () =>
      new Response(
        JSON.stringify({ code: 'invalid_bundle', field: 'source', message: 'bad landmarks' }),
        { status: 400, headers: { 'content-type': 'application/json' } },
      ),
    );
    await expect(
      client.attention(files(), files(), [0, 0]),
    ).rejects.toMatchObject({ status: 400, code: 'invalid_bundle', field: 'source' });
  });

  it('parses attention responses', async () => {
    const doc = {
      pixel: [3, 4],
      entries: [[1, 2, 0.75], [1, 3, 0.25]],
      background: false,
      heatmap_png_base64: 'aGk=',
    };
    const client = new AmorphClient('', async (url) => {
      expect(url).toBe('/v1/attention');
      return new Response(JSON.stringify(doc), {
        status: 200,
        headers: { 'content-type': 'application/json' },
      });
    });
    const got = await client.attention(files(), files(), [3, 4]);
    expect(got.entries).toHaveLength(2);
    expect(got.pixel).toEqual([3, 4]);
  });

  it('health check propagates HTTP failures', async () => {
    const client = new AmorphClient('', async () => new Response('down', { status: 503 }));
    await expect(client.health()).rejects.toBeInstanceOf(ApiError);
  });
});
