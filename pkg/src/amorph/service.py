"""HTTP service exposing the transfer engine.

Stateless endpoints under /v1; the only state is a bounded LRU cache of
distilled references so interactive shade-slider sweeps only pay for
morphing and blending, never for re-distillation. Responses depend solely on
request bodies: a cache hit returns bit-identical fields to a fresh distill,
and evicting the cache never changes any response.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass

from fastapi import FastAPI, Form, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image as PILImage

from . import __version__
from .amm import attention_map_png, attention_row, attention_row_json, attentive_matrix
from .engine import (
    DEFAULT_EYE_RING,
    DEFAULT_W,
    DEFAULT_WINDOW_RADIUS,
    DegenerateFaceError,
    DistilledReference,
    TransferRequest,
    prepare_attention,
    prepare_reference,
    transfer,
)
from .facedata import (
    BACKGROUND,
    BundleError,
    FaceBundle,
    SynthParams,
    WorkingGrid,
    encode_u8,
    load_bundle,
    synth_face,
)

DEFAULT_GRID = 64
DEFAULT_GRID_CAP = 128
DEFAULT_MAX_BYTES = 16 * 1024 * 1024
DEFAULT_CACHE_SIZE = 8


class RequestError(ValueError):
    """Maps straight to an HTTP error envelope."""

    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.field = field


def _error_response(exc: RequestError) -> JSONResponse:
    body = {"code": exc.code, "message": str(exc)}
    if exc.field:
        body["field"] = exc.field
    return JSONResponse(status_code=exc.status, content=body)


class SessionCache:
    """Bounded LRU of distilled references keyed by content hash.

    Distillation runs outside the lock, so concurrent requests for different
    references never wait on each other; duplicate concurrent distills of the
    same key are allowed and harmless (the results are identical).
    """

    def __init__(self, capacity: int = DEFAULT_CACHE_SIZE):
        self.capacity = capacity
        self._store: OrderedDict[str, DistilledReference] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get_or_build(self, key: str, build) -> DistilledReference:
        with self._lock:
            if key in self._store:
                self._store.move_to_end(key)
                self.hits += 1
                return self._store[key]
            self.misses += 1
        value = build()
        with self._lock:
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self.capacity:
                self._store.popitem(last=False)
        return value

    def stats(self) -> dict:
        with self._lock:
            return {
                "capacity": self.capacity,
                "size": len(self._store),
                "hits": self.hits,
                "misses": self.misses,
            }


@dataclass
class ServiceConfig:
    grid_cap: int = DEFAULT_GRID_CAP
    max_bytes: int = DEFAULT_MAX_BYTES
    cache_size: int = DEFAULT_CACHE_SIZE
    cors_origins: tuple[str, ...] = ("*",)
    static_dir: str | None = None  # optional built web UI to serve at /


async def _read_bundle_parts(image: UploadFile, landmarks: UploadFile,
                             parsing: UploadFile) -> tuple[bytes, bytes, bytes]:
    return await image.read(), await landmarks.read(), await parsing.read()


def _bundle_from_bytes(img: bytes, lm: bytes, par: bytes, who: str) -> FaceBundle:
    try:
        return load_bundle(io.BytesIO(img), io.BytesIO(lm), io.BytesIO(par))
    except DegenerateFaceError as exc:
        raise RequestError(422, "degenerate_face", str(exc), field=who) from exc
    except (BundleError, json.JSONDecodeError, PILImage.UnidentifiedImageError,
            ValueError) as exc:
        raise RequestError(400, "invalid_bundle", str(exc), field=who) from exc


def _parse_params(params: str | None, grid_cap: int) -> dict:
    try:
        raw = json.loads(params) if params else {}
    except json.JSONDecodeError as exc:
        raise RequestError(400, "invalid_params", f"params is not valid JSON: {exc}",
                           field="params") from exc
    if not isinstance(raw, dict):
        raise RequestError(400, "invalid_params", "params must be a JSON object",
                           field="params")
    known = {"alpha", "regions", "regions2", "w", "grid", "mode", "window", "eye_ring",
             "pixel"}
    unknown = set(raw) - known
    if unknown:
        raise RequestError(400, "invalid_params", f"unknown params: {sorted(unknown)}",
                           field="params")
    grid = int(raw.get("grid", DEFAULT_GRID))
    if grid > grid_cap:
        raise RequestError(400, "grid_too_large",
                           f"grid {grid} exceeds the server cap {grid_cap}", field="grid")
    try:
        raw["grid_obj"] = WorkingGrid(grid, grid)
    except BundleError as exc:
        raise RequestError(400, "invalid_params", str(exc), field="grid") from exc
    return raw


def _reference_key(img: bytes, lm: bytes, par: bytes, grid: WorkingGrid,
                   mode: str, window: int) -> str:
    digest = hashlib.sha256()
    for part in (img, lm, par):
        digest.update(hashlib.sha256(part).digest())
    digest.update(f"{grid.height}x{grid.width}|{mode}|{window}".encode())
    return digest.hexdigest()


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="amorph", version=__version__)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    cache = SessionCache(config.cache_size)
    app.state.cache = cache

    @app.exception_handler(RequestError)
    async def handle_request_error(_, exc: RequestError):
        return _error_response(exc)

    @app.exception_handler(Exception)
    async def handle_internal(_, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"code": "internal", "message": str(exc)})

    def check_size(parts: list[bytes]) -> None:
        total = sum(len(p) for p in parts)
        if total > config.max_bytes:
            raise RequestError(413, "payload_too_large",
                               f"payload {total} bytes exceeds limit {config.max_bytes}")

    def prepared_reference(img: bytes, lm: bytes, par: bytes, grid: WorkingGrid,
                           mode: str, window: int, who: str) -> tuple[FaceBundle, DistilledReference]:
        bundle = _bundle_from_bytes(img, lm, par, who)
        key = _reference_key(img, lm, par, grid, mode, window)
        ready = cache.get_or_build(
            key, lambda: prepare_reference(bundle, grid, window=window, mode=mode)
        )
        return bundle, ready

    @app.post("/v1/transfer")
    async def transfer_endpoint(
        source_image: UploadFile,
        source_landmarks: UploadFile,
        source_parsing: UploadFile,
        ref_image: UploadFile,
        ref_landmarks: UploadFile,
        ref_parsing: UploadFile,
        ref2_image: UploadFile | None = None,
        ref2_landmarks: UploadFile | None = None,
        ref2_parsing: UploadFile | None = None,
        params: str | None = Form(default=None),
    ):
        src_parts = await _read_bundle_parts(source_image, source_landmarks, source_parsing)
        ref_parts = await _read_bundle_parts(ref_image, ref_landmarks, ref_parsing)
        all_parts = list(src_parts) + list(ref_parts)
        ref2_parts = None
        if ref2_image is not None:
            if ref2_landmarks is None or ref2_parsing is None:
                raise RequestError(400, "invalid_bundle",
                                   "second reference needs image, landmarks and parsing",
                                   field="ref2")
            ref2_parts = await _read_bundle_parts(ref2_image, ref2_landmarks, ref2_parsing)
            all_parts += list(ref2_parts)
        check_size(all_parts)

        opts = _parse_params(params, config.grid_cap)
        grid = opts["grid_obj"]
        mode = opts.get("mode", "per-channel")
        window = int(opts.get("window", DEFAULT_WINDOW_RADIUS))

        source = _bundle_from_bytes(*src_parts, "source")
        references = []
        prepared = []
        bundle, ready = prepared_reference(*ref_parts, grid, mode, window, "ref")
        references.append(bundle)
        prepared.append(ready)
        if ref2_parts is not None:
            bundle, ready = prepared_reference(*ref2_parts, grid, mode, window, "ref2")
            references.append(bundle)
            prepared.append(ready)

        regions = None
        if opts.get("regions") is not None or opts.get("regions2") is not None:
            sel = [frozenset(opts["regions"]) if opts.get("regions") else None]
            if len(references) == 2:
                sel.append(frozenset(opts["regions2"]) if opts.get("regions2") else None)
            regions = tuple(sel)

        try:
            request = TransferRequest(
                source=source,
                references=tuple(references),
                alpha=float(opts.get("alpha", 1.0)),
                regions=regions,
                mode=mode,
                grid=grid,
                w=float(opts.get("w", DEFAULT_W)),
                window_radius=window,
                eye_ring=int(opts.get("eye_ring", DEFAULT_EYE_RING)),
            )
            result = transfer(request, prepared=tuple(prepared))
        except DegenerateFaceError as exc:
            raise RequestError(422, "degenerate_face", str(exc)) from exc
        except BundleError as exc:
            raise RequestError(400, "invalid_bundle", str(exc)) from exc
        except ValueError as exc:
            raise RequestError(400, "invalid_params", str(exc)) from exc

        buf = io.BytesIO()
        PILImage.fromarray(encode_u8(result.output)).save(buf, format="PNG")
        return Response(
            content=buf.getvalue(),
            media_type="image/png",
            headers={
                "X-Amorph-Coverage": f"{result.coverage:.6f}",
                "X-Amorph-Diagnostics": json.dumps(result.diagnostics, sort_keys=True),
            },
        )

    @app.post("/v1/attention")
    async def attention_endpoint(
        source_image: UploadFile,
        source_landmarks: UploadFile,
        source_parsing: UploadFile,
        ref_image: UploadFile,
        ref_landmarks: UploadFile,
        ref_parsing: UploadFile,
        params: str | None = Form(default=None),
    ):
        src_parts = await _read_bundle_parts(source_image, source_landmarks, source_parsing)
        ref_parts = await _read_bundle_parts(ref_image, ref_landmarks, ref_parsing)
        check_size(list(src_parts) + list(ref_parts))
        opts = _parse_params(params, config.grid_cap)
        grid = opts["grid_obj"]
        if "pixel" not in opts:
            raise RequestError(400, "invalid_params", "params.pixel is required",
                               field="pixel")
        pixel = tuple(int(v) for v in opts["pixel"])
        if len(pixel) != 2 or not (0 <= pixel[0] < grid.height and 0 <= pixel[1] < grid.width):
            raise RequestError(400, "invalid_params",
                               f"pixel {pixel} outside the {grid.height}x{grid.width} grid",
                               field="pixel")

        source = _bundle_from_bytes(*src_parts, "source")
        reference = _bundle_from_bytes(*ref_parts, "ref")
        try:
            src_in = prepare_attention(source, grid)
            ref_in = prepare_attention(reference, grid)
        except DegenerateFaceError as exc:
            raise RequestError(422, "degenerate_face", str(exc)) from exc
        w = float(opts.get("w", DEFAULT_W))
        if w < 0:
            raise RequestError(400, "invalid_params", "w must be >= 0", field="w")
        attn = attentive_matrix(
            src_in.features, src_in.positions, src_in.view.parsing,
            ref_in.features, ref_in.positions, ref_in.view.parsing, w,
        )
        doc = attention_row_json(attn, pixel)
        doc["w"] = w
        doc["background"] = bool(src_in.view.parsing.labels[pixel] == BACKGROUND)
        doc["heatmap_png_base64"] = base64.b64encode(
            attention_map_png(attention_row(attn, pixel))
        ).decode()
        return JSONResponse(content=doc)

    @app.get("/v1/demo/{seed}")
    async def demo_bundle(seed: int, lip: str | None = None, noise: float = 0.0):
        """Synthetic demo bundle, base64-packed; the UI's demo data source."""
        lip_color = None
        if lip:
            parts = [float(p) for p in lip.split(",")]
            if len(parts) != 3 or not all(0.0 <= p <= 1.0 for p in parts):
                raise RequestError(400, "invalid_params",
                                   "lip must be three floats in [0,1]", field="lip")
        try:
            bundle = synth_face(
                seed,
                SynthParams(lip_color=tuple(parts) if lip else None, noise=noise),
            )
        except BundleError as exc:
            raise RequestError(400, "invalid_params", str(exc)) from exc
        img = io.BytesIO()
        PILImage.fromarray(encode_u8(bundle.image)).save(img, format="PNG")
        par = io.BytesIO()
        PILImage.fromarray(bundle.parsing.labels, mode="L").save(par, format="PNG")
        return {
            "seed": seed,
            "width": bundle.width,
            "height": bundle.height,
            "image_png_base64": base64.b64encode(img.getvalue()).decode(),
            "parsing_png_base64": base64.b64encode(par.getvalue()).decode(),
            "landmarks": [[float(x), float(y)] for x, y in bundle.landmarks.points],
        }

    @app.get("/v1/health")
    async def health():
        return {
            "status": "ok",
            "version": __version__,
            "grid": DEFAULT_GRID,
            "grid_cap": config.grid_cap,
            "cache": cache.stats(),
        }

    if config.static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def main() -> None:  # pragma: no cover - manual entry point
    import argparse
    import os

    import uvicorn

    def env(name: str, fallback):
        raw = os.environ.get(name)
        return type(fallback)(raw) if raw else fallback

    parser = argparse.ArgumentParser(prog="amorph-serve")
    parser.add_argument("--host", default=env("AMORPH_HOST", "127.0.0.1"))
    parser.add_argument("--port", type=int, default=env("AMORPH_PORT", 8750))
    parser.add_argument("--grid-cap", type=int,
                        default=env("AMORPH_GRID_CAP", DEFAULT_GRID_CAP))
    parser.add_argument("--cache-size", type=int,
                        default=env("AMORPH_CACHE_SIZE", DEFAULT_CACHE_SIZE))
    parser.add_argument("--max-bytes", type=int,
                        default=env("AMORPH_MAX_BYTES", DEFAULT_MAX_BYTES))
    parser.add_argument("--static-dir", default=os.environ.get("AMORPH_STATIC_DIR"),
                        help="serve a built web UI from this directory")
    args = parser.parse_args()
    app = create_app(ServiceConfig(grid_cap=args.grid_cap, cache_size=args.cache_size,
                                   max_bytes=args.max_bytes, static_dir=args.static_dir))
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":  # pragma: no cover
    main()
