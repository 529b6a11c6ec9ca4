"""Command-line frontend: single transfers, batch frames, attention
inspection, histogram matching, the attention-kernel benchmark, and a
synthetic-bundle generator for demos and tests.

Exit codes: 0 success, 2 invalid arguments, 3 data errors (missing or
malformed inputs), 4 internal errors. Every failure prints one
machine-parsable line to stderr: ``error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .amm import (
    attention_map_png,
    attention_row,
    attention_row_json,
    attentive_matrix,
    iter_dense_attention_rows,
)
from .engine import (
    DEFAULT_EYE_RING,
    DEFAULT_W,
    DEFAULT_WINDOW_RADIUS,
    TransferRequest,
    histogram_match_report,
    prepare_attention,
    prepare_reference,
    transfer,
)
from .facedata import (
    BACKGROUND,
    BundleError,
    SynthParams,
    WorkingGrid,
    load_bundle_dir,
    save_bundle_dir,
    save_image,
    synth_face,
)


class ArgsError(ValueError):
    """Invalid flag combination or value (exit 2)."""


def _fail(kind: str, message: str) -> None:
    print(f"error[{kind}]: {message}", file=sys.stderr)


def _parse_color(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3 or not all(0.0 <= p <= 1.0 for p in parts):
        raise ArgsError(f"colour must be three floats in [0,1], got {text!r}")
    return tuple(parts)


def _parse_regions(text: str) -> frozenset[str]:
    names = frozenset(p.strip() for p in text.split(",") if p.strip())
    if not names:
        raise ArgsError("empty region list")
    return names


def _parse_pixel(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ArgsError(f"--pixel wants ROW,COL, got {text!r}")
    return int(parts[0]), int(parts[1])


def _default_threads() -> int:
    env = os.environ.get("AMORPH_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _check_common(args) -> None:
    if not 0.0 <= args.alpha <= 1.0:
        raise ArgsError(f"--alpha must be in [0, 1], got {args.alpha}")
    if args.w < 0:
        raise ArgsError(f"--w must be >= 0, got {args.w}")
    try:
        WorkingGrid(args.grid, args.grid)
    except BundleError as exc:
        raise ArgsError(f"--grid: {exc}") from exc


def request_from_json(doc: dict) -> TransferRequest:
    """Build a TransferRequest from its JSON form: bundle paths + parameters.

    Schema: {"source": dir, "references": [dir, ...], "alpha": float,
    "regions": [[names...] | null, ...], "w": float, "grid": int,
    "mode": str, "window": int, "eye_ring": int}.
    """
    known = {"source", "references", "alpha", "regions", "w", "grid", "mode",
             "window", "eye_ring"}
    unknown = set(doc) - known
    if unknown:
        raise ArgsError(f"unknown request fields: {sorted(unknown)}")
    if "source" not in doc or "references" not in doc:
        raise ArgsError("request JSON needs 'source' and 'references'")
    regions = doc.get("regions")
    if regions is not None:
        regions = tuple(frozenset(sel) if sel is not None else None for sel in regions)
    grid = int(doc.get("grid", 64))
    return TransferRequest(
        source=load_bundle_dir(doc["source"]),
        references=tuple(load_bundle_dir(d) for d in doc["references"]),
        alpha=float(doc.get("alpha", 1.0)),
        regions=regions,
        mode=doc.get("mode", "per-channel"),
        grid=WorkingGrid(grid, grid),
        w=float(doc.get("w", DEFAULT_W)),
        window_radius=int(doc.get("window", DEFAULT_WINDOW_RADIUS)),
        eye_ring=int(doc.get("eye_ring", DEFAULT_EYE_RING)),
    )


def _build_request(args) -> TransferRequest:
    if args.request:
        with open(args.request) as fh:
            return request_from_json(json.load(fh))
    source = load_bundle_dir(args.source)
    references = [load_bundle_dir(args.ref)]
    regions = None
    if args.ref2:
        references.append(load_bundle_dir(args.ref2))
        if (args.regions is None) != (args.regions2 is None):
            raise ArgsError("--regions and --regions2 must be given together")
        if args.regions is not None:
            regions = (args.regions, args.regions2)
    elif args.regions is not None:
        regions = (args.regions,)
    elif args.regions2 is not None:
        raise ArgsError("--regions2 needs --ref2")
    return TransferRequest(
        source=source,
        references=tuple(references),
        alpha=args.alpha,
        regions=regions,
        mode=args.mode,
        grid=WorkingGrid(args.grid, args.grid),
        w=args.w,
        window_radius=args.window,
        eye_ring=args.eye_ring,
    )


def _write_result(result, out_path: Path, diag_path: Path | None) -> None:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_image(result.output, out_path)
    if diag_path is not None:
        diag_path.parent.mkdir(parents=True, exist_ok=True)
        with open(diag_path, "w") as fh:
            json.dump(result.diagnostics, fh, sort_keys=True, indent=2)


def cmd_transfer(args) -> int:
    if not args.request and not (args.source and args.ref):
        raise ArgsError("either --request or both --source and --ref are required")
    result = transfer(_build_request(args))
    out = Path(args.output)
    diag = Path(args.diagnostics) if args.diagnostics else out.with_suffix(".json")
    _write_result(result, out, diag)
    print(f"wrote {out} (coverage {result.coverage:.3f})")
    return 0


def cmd_batch(args) -> int:
    frames_dir = Path(args.frames)
    frame_dirs = sorted(d for d in frames_dir.iterdir() if d.is_dir()) if frames_dir.is_dir() else []
    if not frame_dirs:
        raise BundleError(f"no frame bundles found in {frames_dir}")
    reference = load_bundle_dir(args.ref)
    grid = WorkingGrid(args.grid, args.grid)
    prepared = (prepare_reference(reference, grid, window=args.window, mode=args.mode),)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_frame(frame_dir: Path) -> str:
        request = TransferRequest(
            source=load_bundle_dir(frame_dir),
            references=(reference,),
            alpha=args.alpha,
            regions=(args.regions,) if args.regions else None,
            mode=args.mode,
            grid=grid,
            w=args.w,
            window_radius=args.window,
            eye_ring=args.eye_ring,
        )
        result = transfer(request, prepared=prepared)
        out_path = out_dir / f"{frame_dir.name}.png"
        save_image(result.output, out_path)
        return f"{frame_dir.name}: coverage {result.coverage:.3f}"

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            for line in pool.map(run_frame, frame_dirs):
                print(line)
    else:
        for frame_dir in frame_dirs:
            print(run_frame(frame_dir))
    print(f"processed {len(frame_dirs)} frames -> {out_dir}")
    return 0


def cmd_attention(args) -> int:
    source = load_bundle_dir(args.source)
    reference = load_bundle_dir(args.ref)
    grid = WorkingGrid(args.grid, args.grid)
    src_in = prepare_attention(source, grid)
    ref_in = prepare_attention(reference, grid)
    pixel = args.pixel
    if not (0 <= pixel[0] < grid.height and 0 <= pixel[1] < grid.width):
        raise ArgsError(f"--pixel {pixel} outside the {grid.height}x{grid.width} grid")
    if src_in.view.parsing.labels[pixel] == BACKGROUND:
        print("warning: pixel lies on background; attention map is empty", file=sys.stderr)

    weights = args.w_sweep if args.w_sweep is not None else [args.w]
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    for w in weights:
        attn = attentive_matrix(
            src_in.features, src_in.positions, src_in.view.parsing,
            ref_in.features, ref_in.positions, ref_in.view.parsing, w,
        )
        heat = attention_row(attn, pixel)
        suffix = f"_w{w:g}" if len(weights) > 1 else ""
        png_path = out.with_name(out.stem + suffix + out.suffix)
        png_path.write_bytes(attention_map_png(heat))
        doc = attention_row_json(attn, pixel)
        doc["w"] = w
        json_path = png_path.with_suffix(".json")
        with open(json_path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
        print(f"wrote {png_path} and {json_path} ({len(doc['entries'])} entries)")
    return 0


def cmd_histmatch(args) -> int:
    source = load_bundle_dir(args.source)
    reference = load_bundle_dir(args.ref)
    matched, skipped = histogram_match_report(source, reference)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(matched, out)
    if skipped:
        print(f"warning: regions empty in reference, copied from source: {skipped}",
              file=sys.stderr)
    print(f"wrote {out}")
    return 0


def cmd_synth(args) -> int:
    params = SynthParams(
        size=args.size,
        rotation_deg=args.rotation,
        scale_x=args.scale_x,
        scale_y=args.scale_y,
        shift_x=args.shift_x,
        shift_y=args.shift_y,
        eye_openness=args.eye_openness,
        mouth_size=args.mouth_size,
        skin_color=args.skin_color,
        lip_color=args.lip_color,
        eye_color=args.eye_color,
        background_color=args.background_color,
        noise=args.noise,
    )
    bundle = synth_face(args.seed, params)
    save_bundle_dir(bundle, args.out_dir)
    print(f"wrote synthetic bundle to {args.out_dir}")
    return 0


def run_benchmark(sizes: list[int], seed: int = 0, noise: float = 0.05) -> list[dict]:
    """Time region-bucketed vs dense attention on one synth pair per size.

    Both paths are checked for agreement (1e-6 max abs) before timing.
    """
    rows = []
    src = synth_face(seed, SynthParams(noise=noise))
    ref = synth_face(seed + 1, SynthParams(noise=noise))
    for size in sizes:
        grid = WorkingGrid(size, size)
        a = prepare_attention(src, grid)
        b = prepare_attention(ref, grid)
        inputs = (a.features, a.positions, a.view.parsing,
                  b.features, b.positions, b.view.parsing, DEFAULT_W)

        bucketed = attentive_matrix(*inputs)
        worst = 0.0
        for start, stop, dense_rows in iter_dense_attention_rows(*inputs):
            worst = max(worst, float(np.abs(dense_rows - bucketed.dense_rows(start, stop)).max()))
        if worst > 1e-6:
            raise RuntimeError(f"dense/bucketed disagreement {worst:.2e} at size {size}")

        t0 = time.perf_counter()
        bucketed = attentive_matrix(*inputs)
        t_bucketed = time.perf_counter() - t0

        t0 = time.perf_counter()
        for _ in iter_dense_attention_rows(*inputs):
            pass
        t_dense = time.perf_counter() - t0

        labels_x = a.view.parsing.labels.ravel()
        labels_y = b.view.parsing.labels.ravel()
        bucketed_pairs = sum(
            int((labels_x == lbl).sum()) * int((labels_y == lbl).sum())
            for lbl in np.unique(labels_x) if lbl != BACKGROUND
        )
        dense_pairs = labels_x.size * labels_y.size
        rows.append({
            "size": size,
            "agreement_max_abs": worst,
            "bucketed_seconds": t_bucketed,
            "dense_seconds": t_dense,
            "speedup": t_dense / t_bucketed if t_bucketed > 0 else float("inf"),
            "bucketed_pairs": bucketed_pairs,
            "dense_pairs": dense_pairs,
            "bucketed_pairs_per_sec": bucketed_pairs / t_bucketed if t_bucketed else 0.0,
            "dense_pairs_per_sec": dense_pairs / t_dense if t_dense else 0.0,
            "background_fraction": float((labels_x == BACKGROUND).mean()),
        })
    return rows


def cmd_bench(args) -> int:
    rows = run_benchmark(args.sizes, seed=args.seed)
    print(f"{'size':>5} {'agree':>9} {'bucketed_s':>11} {'dense_s':>9} "
          f"{'speedup':>8} {'bucketed_pairs/s':>17} {'dense_pairs/s':>14}")
    for r in rows:
        print(f"{r['size']:>5} {r['agreement_max_abs']:>9.1e} {r['bucketed_seconds']:>11.3f} "
              f"{r['dense_seconds']:>9.3f} {r['speedup']:>8.2f} "
              f"{r['bucketed_pairs_per_sec']:>17.3e} {r['dense_pairs_per_sec']:>14.3e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
        print(f"wrote {args.json}")
    return 0


def _add_common_transfer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=1.0, help="shade coefficient in [0,1]")
    p.add_argument("--w", type=float, default=DEFAULT_W, help="visual feature weight")
    p.add_argument("--grid", type=int, default=64, help="working grid size (power of two)")
    p.add_argument("--mode", choices=["per-channel", "broadcast"], default="per-channel")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW_RADIUS,
                   help="distillation window radius (working px)")
    p.add_argument("--eye-ring", type=int, default=DEFAULT_EYE_RING,
                   help="skin ring annexed by an 'eyes' selection (working px)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amorph",
        description="Landmark-anchored attentive makeup transfer",
    )
    parser.add_argument("--version", action="version", version=f"amorph {__version__}")
    parser.add_argument("--config", help="JSON file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transfer", help="transfer makeup from reference(s) to a source")
    p.add_argument("--request", help="JSON request file (paths + parameters); "
                                     "overrides the bundle flags")
    p.add_argument("--source", help="source bundle directory")
    p.add_argument("--ref", help="reference bundle directory")
    p.add_argument("--ref2", help="second reference bundle directory")
    p.add_argument("--regions", type=_parse_regions,
                   help="comma list of regions taken from --ref (lip,skin,eyes)")
    p.add_argument("--regions2", type=_parse_regions,
                   help="comma list of regions taken from --ref2")
    p.add_argument("-o", "--output", required=True, help="output PNG path")
    p.add_argument("--diagnostics", help="diagnostics JSON path (default: next to output)")
    _add_common_transfer_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("batch", help="per-frame transfer over a directory of frame bundles")
    p.add_argument("--frames", required=True, help="directory of frame bundle directories")
    p.add_argument("--ref", required=True, help="reference bundle directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--regions", type=_parse_regions)
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="frame parallelism (default AMORPH_THREADS or 1)")
    _add_common_transfer_flags(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("attention", help="export one source pixel's attention map")
    p.add_argument("--source", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--pixel", type=_parse_pixel, required=True, help="ROW,COL on the working grid")
    p.add_argument("-o", "--output", required=True, help="heat map PNG path")
    p.add_argument("--w", type=float, default=DEFAULT_W)
    p.add_argument("--w-sweep", type=lambda s: [float(v) for v in s.split(",")],
                   help="comma list of weights; writes one map per value")
    p.add_argument("--grid", type=int, default=64)
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("histmatch", help="region-wise histogram matching")
    p.add_argument("--source", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_histmatch)

    p = sub.add_parser("bench", help="benchmark dense vs region-bucketed attention")
    p.add_argument("--sizes", type=lambda s: [int(v) for v in s.split(",")],
                   default=[32, 64, 128])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write results as JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="emit a synthetic face bundle")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--rotation", type=float, default=0.0)
    p.add_argument("--scale-x", type=float, default=1.0)
    p.add_argument("--scale-y", type=float, default=1.0)
    p.add_argument("--shift-x", type=float, default=0.0)
    p.add_argument("--shift-y", type=float, default=0.0)
    p.add_argument("--eye-openness", type=float, default=1.0)
    p.add_argument("--mouth-size", type=float, default=1.0)
    p.add_argument("--skin-color", type=_parse_color)
    p.add_argument("--lip-color", type=_parse_color)
    p.add_argument("--eye-color", type=_parse_color)
    p.add_argument("--background-color", type=_parse_color)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Load --config JSON as flag defaults; explicit flags still win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise ArgsError("--config needs a path")
    path = argv[idx + 1]
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError as exc:
        raise BundleError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise BundleError("config file must hold a JSON object")
    for sub_action in parser._subparsers._group_actions:
        for sub_parser in sub_action.choices.values():
            known = {a.dest for a in sub_parser._actions}
            usable = {k: v for k, v in config.items() if k in known}
            sub_parser.set_defaults(**usable)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse already printed its message
            return int(exc.code or 0)
        if hasattr(args, "alpha"):
            _check_common(args)
        if hasattr(args, "threads") and args.threads < 1:
            raise ArgsError(f"--threads must be >= 1, got {args.threads}")
        return args.func(args)
    except ArgsError as exc:
        _fail("args", str(exc))
        return 2
    except (BundleError, FileNotFoundError, NotADirectoryError) as exc:
        _fail("data", str(exc))
        return 3
    except ValueError as exc:
        _fail("args", str(exc))
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _fail("internal", f"{type(exc).__name__}: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
