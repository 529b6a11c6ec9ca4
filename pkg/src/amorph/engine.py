"""End-to-end makeup transfer.

The reference image is distilled into per-pixel makeup statistics (windowed
mean/deviation of a decorrelated colour representation, masked to each
pixel's own face region). Attention morphs those statistics onto the source
geometry, region masks and convex blending give partial and shade control,
and the modulated features are composited back at source resolution. All
steps are pure functions of their inputs; a transfer never mutates shared
state and repeated runs are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .amm import (
    GAMMA_MIN,
    MODE_BROADCAST,
    MODE_PER_CHANNEL,
    AttentionMatrix,
    DimensionError,
    MakeupField,
    RelPosField,
    attentive_matrix,
    expand_field,
    identity_field,
    morph_field,
    rel_pos_features,
)
from .facedata import (
    BACKGROUND,
    EYES,
    FACE_LABELS,
    NAME_TO_LABEL,
    REGION_NAMES,
    SKIN,
    BundleError,
    FaceBundle,
    Image,
    LandmarkSet,
    ParsingMap,
    WorkingGrid,
    downsample_bundle,
    upsample_residual_masked,
)

# Lower clamp for per-region standardization; keeps flat regions finite.
STD_MIN = 1e-3


class DegenerateFaceError(BundleError):
    """The face disappears at working resolution or has no usable pixels."""

DEFAULT_W = 0.01
DEFAULT_WINDOW_RADIUS = 3
DEFAULT_EYE_RING = 2

# Attention feature bank. Colours are blurred at half-octave scales within
# each region (measured in working-grid cells, applied at full resolution so
# no block-sampling phase error enters), turned into difference-of-Gaussian
# bands plus their local energy, standardized per region, unit-normalized per
# band and scaled. The energy channels are phase-invariant, which is what
# keeps correspondences stable under sub-cell warps; the scale makes the
# appearance term commensurate with the unit-norm position term at the stock
# w (which the source material balanced against large unnormalized features).
FEATURE_SCALE = 180.0
FEATURE_SIGMAS = (0.5, 0.71, 1.0, 1.41, 2.0, 2.83, 4.0, 5.66, 8.0)
FEATURE_PLAIN_SIGMAS = (1.0, 4.0)

REGION_NAME_SET = frozenset(REGION_NAMES[label] for label in FACE_LABELS)


# ---------------------------------------------------------------------------
# working-resolution views
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkingView:
    """A bundle brought to working resolution, in both colour spaces."""

    rgb: np.ndarray  # (H, W, 3)
    lab: np.ndarray  # (H, W, 3) decorrelated
    landmarks: LandmarkSet
    parsing: ParsingMap


def working_view(bundle: FaceBundle, grid: WorkingGrid) -> WorkingView:
    image, landmarks, parsing = downsample_bundle(bundle, grid)
    if not parsing.face_mask.any():
        raise DegenerateFaceError("face vanished at working resolution")
    lab = image.to_lab().data
    return WorkingView(rgb=image.data, lab=lab, landmarks=landmarks, parsing=parsing)


# ---------------------------------------------------------------------------
# windowed masked statistics (the makeup distillation surrogate)
# ---------------------------------------------------------------------------


def _box_sum(arr: np.ndarray, radius: int) -> np.ndarray:
    """Sliding-window sum over a (2r+1)^2 window clipped at the borders."""
    h, w = arr.shape[:2]
    integral = np.zeros((h + 1, w + 1) + arr.shape[2:], dtype=np.float64)
    integral[1:, 1:] = arr.cumsum(axis=0).cumsum(axis=1)
    r0 = np.clip(np.arange(h) - radius, 0, h)
    r1 = np.clip(np.arange(h) + radius + 1, 0, h)
    c0 = np.clip(np.arange(w) - radius, 0, w)
    c1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return (
        integral[r1][:, c1]
        - integral[r0][:, c1]
        - integral[r1][:, c0]
        + integral[r0][:, c0]
    )


def masked_window_stats(
    values: np.ndarray, labels: np.ndarray, radius: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel windowed mean and population std within the pixel's own region.

    A lip pixel's window never reads skin samples and vice versa; background
    pixels get zeros.
    """
    if radius < 1:
        raise ValueError(f"window radius must be >= 1, got {radius}")
    values = np.asarray(values, dtype=np.float64)
    mean = np.zeros_like(values)
    std = np.zeros_like(values)
    for label in FACE_LABELS:
        region = labels == label
        if not region.any():
            continue
        m = region.astype(np.float64)
        counts = _box_sum(m, radius)
        masked = values * m[:, :, None]
        s1 = _box_sum(masked, radius)
        s2 = _box_sum(masked * values, radius)
        n = np.maximum(counts, 1.0)[:, :, None]
        mu = s1 / n
        var = np.maximum(s2 / n - mu * mu, 0.0)
        mean[region] = mu[region]
        std[region] = np.sqrt(var[region])
    return mean, std


def attention_features(
    bundle: FaceBundle,
    view: WorkingView,
    grid: WorkingGrid,
    scale: float = FEATURE_SCALE,
    sigmas: tuple[float, ...] = FEATURE_SIGMAS,
    plain_sigmas: tuple[float, ...] = FEATURE_PLAIN_SIGMAS,
) -> np.ndarray:
    """Visual features for the attention similarity, on the working grid.

    Per region, the full-resolution decorrelated colours are Gaussian-blurred
    at half-octave scales (masked, so nothing bleeds across region borders or
    pulls in background fill), differenced into band-pass channels, and
    augmented with each band's local energy. Every band is standardized per
    region and unit-normalized per pixel, so the attention dot product sees
    scale^2 * w^2 * mean-cosine: bounded, with no high-contrast pixel able to
    dominate. Flat (featureless) regions yield zeros and fall back to pure
    position matching.
    """
    lab_full = bundle.image.to_lab().data
    labels_full = bundle.parsing.labels
    ratio = bundle.height / grid.height
    rows = (np.arange(grid.height) + 0.5) * (bundle.height / grid.height) - 0.5
    cols = (np.arange(grid.width) + 0.5) * (bundle.width / grid.width) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()])

    def masked_blur(sigma_cells: float) -> np.ndarray:
        sigma = sigma_cells * ratio
        out = np.zeros((3,) + lab_full.shape[:2])
        for label in FACE_LABELS:
            mask = (labels_full == label).astype(np.float64)
            if not mask.any():
                continue
            den = ndimage.gaussian_filter(mask, sigma=sigma)
            sel = mask > 0
            for ch in range(3):
                num = ndimage.gaussian_filter(lab_full[:, :, ch] * mask, sigma=sigma)
                out[ch][sel] = num[sel] / np.maximum(den[sel], 1e-12)
        return out

    def to_grid(field: np.ndarray) -> np.ndarray:
        return np.stack(
            [
                ndimage.map_coordinates(field[ch], coords, order=1).reshape(grid.shape)
                for ch in range(field.shape[0])
            ]
        )

    def normalized_group(field_grid: np.ndarray) -> np.ndarray:
        out = field_grid.copy()
        for label in FACE_LABELS:
            region = view.parsing.labels == label
            if not region.any():
                continue
            vals = out[:, region]
            mu = vals.mean(axis=1, keepdims=True)
            sd = np.maximum(vals.std(axis=1, keepdims=True), 1e-9)
            out[:, region] = (vals - mu) / sd
        norms = np.linalg.norm(out, axis=0)
        safe = np.where(norms > 1e-9, norms, 1.0)
        return out / safe

    blurred = {s: masked_blur(s) for s in {*sigmas, *plain_sigmas}}
    face_full = labels_full != BACKGROUND
    groups = []
    for lo, hi in zip(sigmas, sigmas[1:]):
        band = blurred[lo] - blurred[hi]
        groups.append(normalized_group(to_grid(band)))
        energy_sigma = max(hi * ratio, 1.0)
        energy = np.sqrt(
            np.stack(
                [
                    ndimage.gaussian_filter(band[ch] ** 2 * face_full, sigma=energy_sigma)
                    for ch in range(3)
                ]
            )
            + 1e-12
        )
        groups.append(normalized_group(to_grid(energy)))
    for s in plain_sigmas:
        groups.append(normalized_group(to_grid(blurred[s])))
    return np.concatenate(groups, axis=0) / np.sqrt(len(groups)) * scale


def makeup_statistics(
    view: WorkingView,
    window: int = DEFAULT_WINDOW_RADIUS,
    mode: str = MODE_PER_CHANNEL,
) -> MakeupField:
    """Raw-unit makeup field of a working view: windowed local mean (beta) and
    deviation (gamma, clamped at GAMMA_MIN) of the decorrelated colours,
    masked to each pixel's own region. Broadcast mode averages the
    per-channel statistics into a single plane."""
    mean, std = masked_window_stats(view.lab, view.parsing.labels, window)
    if mode == MODE_BROADCAST:
        mean = mean.mean(axis=2, keepdims=True)
        std = std.mean(axis=2, keepdims=True)
    elif mode != MODE_PER_CHANNEL:
        raise ValueError(f"unknown makeup field mode {mode!r}")
    gamma = np.maximum(std, GAMMA_MIN).transpose(2, 0, 1)
    beta = mean.transpose(2, 0, 1)
    # background never participates in morphing; keep it at the identity
    bg = ~view.parsing.face_mask
    gamma[:, bg] = 1.0
    beta[:, bg] = 0.0
    return MakeupField(gamma=gamma, beta=beta, mode=mode)


def distill(
    reference: FaceBundle,
    grid: WorkingGrid,
    window: int = DEFAULT_WINDOW_RADIUS,
    mode: str = MODE_PER_CHANNEL,
) -> tuple[MakeupField, np.ndarray]:
    """Distill a reference into a raw-unit makeup field plus attention features.

    The field carries the reference's actual colours (constant regions give
    beta equal to the colour and gamma at the clamp); the feature grid feeds
    the appearance term of the attention.
    """
    view = working_view(reference, grid)
    field = makeup_statistics(view, window=window, mode=mode)
    return field, attention_features(reference, view, grid)


@dataclass(frozen=True)
class AttentionInputs:
    """Everything the attention needs from one bundle."""

    view: WorkingView
    features: np.ndarray
    positions: RelPosField


def prepare_attention(bundle: FaceBundle, grid: WorkingGrid) -> AttentionInputs:
    view = working_view(bundle, grid)
    return AttentionInputs(
        view=view,
        features=attention_features(bundle, view, grid),
        positions=rel_pos_features(view.landmarks, grid),
    )


@dataclass(frozen=True)
class DistilledReference:
    """A reference's distilled makeup field plus its attention inputs.

    This is the expensive, source-independent half of a transfer; callers
    that reuse one reference across many sources (interactive shade sliders,
    video frames) compute it once and pass it back into transfer().
    """

    field: MakeupField
    inputs: AttentionInputs


def prepare_reference(
    reference: FaceBundle,
    grid: WorkingGrid,
    window: int = DEFAULT_WINDOW_RADIUS,
    mode: str = MODE_PER_CHANNEL,
) -> DistilledReference:
    inputs = prepare_attention(reference, grid)
    field = makeup_statistics(inputs.view, window=window, mode=mode)
    return DistilledReference(field=field, inputs=inputs)


# ---------------------------------------------------------------------------
# affine-free normalization of the source
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormRecord:
    """Per-region, per-channel mean and clamped std used for normalization."""

    mean: np.ndarray  # (4, C) indexed by parsing label
    std: np.ndarray  # (4, C), >= STD_MIN

    def pixel_mean(self, labels: np.ndarray) -> np.ndarray:
        return self.mean[labels]  # (H, W, C)

    def pixel_std(self, labels: np.ndarray) -> np.ndarray:
        return self.std[labels]


def normalize_values(
    lab: np.ndarray, parsing: ParsingMap
) -> tuple[np.ndarray, NormRecord]:
    """Standardize each face region per channel; background stays zero."""
    c = lab.shape[2]
    mean = np.zeros((4, c))
    std = np.ones((4, c))
    out = np.zeros_like(lab)
    seen_face = False
    for label in FACE_LABELS:
        region = parsing.labels == label
        if not region.any():
            continue
        seen_face = True
        vals = lab[region]
        mu = vals.mean(axis=0)
        sd = np.maximum(vals.std(axis=0), STD_MIN)
        mean[label] = mu
        std[label] = sd
        out[region] = (vals - mu) / sd
    if not seen_face:
        raise DegenerateFaceError("cannot normalize an empty face")
    return out.transpose(2, 0, 1), NormRecord(mean=mean, std=std)


def denormalize_values(
    features: np.ndarray, record: NormRecord, parsing: ParsingMap
) -> np.ndarray:
    """Inverse of normalize_values on face pixels; background returns zero."""
    hwc = features.transpose(1, 2, 0)
    out = hwc * record.pixel_std(parsing.labels) + record.pixel_mean(parsing.labels)
    out[~parsing.face_mask] = 0.0
    return out


def normalize_source(
    source: FaceBundle, grid: WorkingGrid
) -> tuple[np.ndarray, NormRecord]:
    """Affine-free per-region standardization of the source at working resolution."""
    view = working_view(source, grid)
    return normalize_values(view.lab, view.parsing)


# ---------------------------------------------------------------------------
# field algebra: rebasing, blending, application
# ---------------------------------------------------------------------------


def rebase_field(
    field: MakeupField,
    empty_rows: np.ndarray,
    record: NormRecord,
    parsing: ParsingMap,
) -> MakeupField:
    """Express a raw-unit morphed field in source-normalized units.

    After rebasing, (gamma=1, beta=0) means "leave the source pixel alone":
    applying the field to normalized features and denormalizing with the
    source record reproduces the source exactly. Attended pixels instead
    reproduce the morphed reference statistics. Rows flagged empty (and all
    background) are forced to the identity.
    """
    if field.mode != MODE_PER_CHANNEL:
        raise ValueError("rebase requires a per-channel field; call expand_field first")
    labels = parsing.labels
    sigma = record.pixel_std(labels).transpose(2, 0, 1)
    mu = record.pixel_mean(labels).transpose(2, 0, 1)
    gamma = field.gamma / sigma
    beta = (field.beta - mu) / sigma
    off = np.asarray(empty_rows).reshape(labels.shape) | (labels == BACKGROUND)
    gamma[:, off] = 1.0
    beta[:, off] = 0.0
    return MakeupField(gamma=gamma, beta=beta, mode=MODE_PER_CHANNEL)


def blend_partial(
    fields: list[tuple[MakeupField, np.ndarray]],
    shape: tuple[int, int] | None = None,
    planes: int = 1,
) -> MakeupField:
    """Region-masked mixing of makeup fields.

    Each entry pairs a field with a binary mask; masks must be mutually
    disjoint. Pixels no mask covers keep the identity modulation.
    """
    if not fields:
        if shape is None:
            raise ValueError("empty field list needs an explicit grid shape")
        return identity_field(shape, planes=planes,
                              mode=MODE_BROADCAST if planes == 1 else MODE_PER_CHANNEL)
    base = fields[0][0]
    cover = np.zeros(base.grid_shape)
    gamma = np.zeros_like(base.gamma)
    beta = np.zeros_like(base.beta)
    for fld, mask in fields:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != base.grid_shape or fld.grid_shape != base.grid_shape:
            raise DimensionError("blend_partial operands disagree on grid shape")
        if fld.planes != base.planes or fld.mode != base.mode:
            raise DimensionError("blend_partial operands disagree on planes/mode")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("partial-blend masks must be binary")
        cover += m
        gamma += fld.gamma * m[None]
        beta += fld.beta * m[None]
    if cover.max() > 1.0:
        raise ValueError("partial-blend masks overlap")
    rest = 1.0 - cover
    gamma += rest[None]  # identity gamma on uncovered pixels
    return MakeupField(gamma=gamma, beta=beta, mode=base.mode)


def blend_interpolate(field_1: MakeupField, field_2: MakeupField, alpha: float) -> MakeupField:
    """Convex combination of two fields: alpha of the first, 1-alpha of the second."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if field_1.grid_shape != field_2.grid_shape or field_1.planes != field_2.planes:
        raise DimensionError("interpolation operands disagree on shape")
    return MakeupField(
        gamma=alpha * field_1.gamma + (1.0 - alpha) * field_2.gamma,
        beta=alpha * field_1.beta + (1.0 - alpha) * field_2.beta,
        mode=field_1.mode,
    )


def shade(field_ref: MakeupField, field_self: MakeupField, alpha: float) -> MakeupField:
    """Shade control with a single reference: alpha=1 is the full reference
    makeup, alpha=0 the source's own (self-morphed) field."""
    return blend_interpolate(field_ref, field_self, alpha)


def apply_makeup(v_x: np.ndarray, morphed: MakeupField) -> np.ndarray:
    """Elementwise modulation of the normalized source features."""
    v = np.asarray(v_x, dtype=np.float64)
    if v.shape != morphed.gamma.shape:
        raise DimensionError(
            f"feature grid {v.shape} does not match makeup field {morphed.gamma.shape}"
        )
    return morphed.gamma * v + morphed.beta


# ---------------------------------------------------------------------------
# transfer requests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferRequest:
    """Everything one transfer needs; serializable as JSON paths + params."""

    source: FaceBundle
    references: tuple[FaceBundle, ...]
    alpha: float = 1.0
    regions: tuple[frozenset[str] | None, ...] | None = None  # per reference
    mode: str = MODE_PER_CHANNEL
    grid: WorkingGrid = dc_field(default_factory=WorkingGrid)
    w: float = DEFAULT_W
    window_radius: int = DEFAULT_WINDOW_RADIUS
    eye_ring: int = DEFAULT_EYE_RING

    def __post_init__(self):
        if not 1 <= len(self.references) <= 2:
            raise ValueError(f"need 1 or 2 references, got {len(self.references)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.w < 0:
            raise ValueError(f"visual feature weight must be >= 0, got {self.w}")
        if self.mode not in (MODE_BROADCAST, MODE_PER_CHANNEL):
            raise ValueError(f"unknown mode {self.mode!r}")
        regions = self.regions
        if regions is not None:
            if len(regions) != len(self.references):
                raise ValueError("one region selection per reference required")
            sets = []
            for sel in regions:
                if sel is None:
                    sets.append(None)
                    continue
                sel = frozenset(sel)
                unknown = sel - REGION_NAME_SET
                if unknown:
                    raise ValueError(f"unknown region names: {sorted(unknown)}")
                sets.append(sel)
            object.__setattr__(self, "regions", tuple(sets))
            if len(self.references) == 2:
                a, b = self.regions
                if (a is None) != (b is None):
                    raise ValueError(
                        "two-reference requests need region selections for both "
                        "references (or neither, for interpolation)"
                    )
                if a is not None and a & b:
                    raise ValueError(
                        f"two-reference region selections overlap: {sorted(a & b)}"
                    )

    @property
    def is_partial(self) -> bool:
        return self.regions is not None and any(s is not None for s in self.regions)


@dataclass(frozen=True)
class TransferResult:
    output: Image
    coverage: float
    diagnostics: dict


def selection_masks(
    parsing: ParsingMap,
    selections: list[frozenset[str]],
    eye_ring: int,
) -> list[np.ndarray]:
    """Binary working-resolution masks for per-reference region selections.

    An "eyes" selection annexes a dilation ring of nearby skin (eye shadow
    sits on skin), but never pixels another selection claims.
    """
    base = []
    for sel in selections:
        mask = np.zeros(parsing.labels.shape, dtype=bool)
        for name in sel:
            mask |= parsing.labels == NAME_TO_LABEL[name]
        base.append(mask)
    claimed = np.logical_or.reduce(base) if base else np.zeros_like(parsing.labels, bool)
    out = []
    for sel, mask in zip(selections, base):
        if "eyes" in sel and eye_ring > 0:
            eyes = parsing.labels == EYES
            ring = ndimage.binary_dilation(eyes, iterations=eye_ring)
            mask = mask | (ring & (parsing.labels == SKIN) & ~claimed)
        out.append(mask)
    return out


def _morph_reference(
    source: AttentionInputs,
    record: NormRecord,
    prepared: DistilledReference,
    request: TransferRequest,
) -> tuple[MakeupField, AttentionMatrix]:
    """Attend to a distilled reference, morph its field, rebase to source units."""
    attn = attentive_matrix(
        source.features,
        source.positions,
        source.view.parsing,
        prepared.inputs.features,
        prepared.inputs.positions,
        prepared.inputs.view.parsing,
        request.w,
    )
    morphed = expand_field(morph_field(attn, prepared.field), 3)
    rebased = rebase_field(morphed, ~attn.row_nonempty, record, source.view.parsing)
    return rebased, attn


def _attention_stats(attn: AttentionMatrix, parsing: ParsingMap) -> dict:
    stats = {}
    labels_flat = parsing.labels.ravel()
    for label in FACE_LABELS:
        rows = labels_flat == label
        n = int(rows.sum())
        entry = {"pixels": n, "covered": 0, "mean_top_weight": 0.0}
        if n and label in attn.blocks:
            _, _, weights = attn.blocks[label]
            entry["covered"] = int(weights.shape[0])
            entry["mean_top_weight"] = float(weights.max(axis=1).mean())
        stats[REGION_NAMES[label]] = entry
    return stats


def transfer(
    request: TransferRequest,
    prepared: tuple[DistilledReference, ...] | None = None,
) -> TransferResult:
    """Run the full makeup transfer pipeline for one request.

    Composes: downsample, distill each reference, normalize the source,
    relative-position attention, morphing, partial/shade blending, feature
    modulation, denormalization with the source record, and residual
    compositing at source resolution. Background pixels of the output are
    byte-identical to the source.

    `prepared` may carry the references already distilled (from
    prepare_reference with the same grid/window/mode); the result is
    bit-identical to distilling in place.
    """
    src = request.source
    grid = request.grid
    source = prepare_attention(src, grid)
    view_x = source.view
    v_x, record = normalize_values(view_x.lab, view_x.parsing)

    if prepared is None:
        prepared = tuple(
            prepare_reference(ref, grid, window=request.window_radius, mode=request.mode)
            for ref in request.references
        )
    elif len(prepared) != len(request.references):
        raise ValueError("prepared references do not match the request")

    ref_fields = []
    attns = []
    for ready in prepared:
        fld, attn = _morph_reference(source, record, ready, request)
        ref_fields.append(fld)
        attns.append(attn)

    shape = grid.shape
    alpha_applied = False
    governed = np.ones(shape, dtype=bool)  # pixels whose modulation needs coverage

    if request.is_partial:
        sels = [s if s is not None else REGION_NAME_SET for s in request.regions]
        masks = selection_masks(view_x.parsing, sels, request.eye_ring)
        combined = blend_partial(list(zip(ref_fields, masks)), shape=shape)
        governed = np.logical_or.reduce(masks)
        cover_rows = np.zeros(shape, dtype=bool)
        for attn, mask in zip(attns, masks):
            cover_rows |= attn.row_nonempty.reshape(shape) & mask
    elif len(ref_fields) == 2:
        combined = blend_interpolate(ref_fields[0], ref_fields[1], request.alpha)
        alpha_applied = True
        cover_rows = np.logical_and.reduce([a.row_nonempty.reshape(shape) for a in attns])
    else:
        combined = ref_fields[0]
        cover_rows = attns[0].row_nonempty.reshape(shape)

    if request.alpha < 1.0 and not alpha_applied:
        field_self_raw = makeup_statistics(
            view_x, window=request.window_radius, mode=request.mode
        )
        attn_self = attentive_matrix(
            source.features,
            source.positions,
            view_x.parsing,
            source.features,
            source.positions,
            view_x.parsing,
            request.w,
        )
        morphed_self = expand_field(morph_field(attn_self, field_self_raw), 3)
        field_self = rebase_field(
            morphed_self, ~attn_self.row_nonempty, record, view_x.parsing
        )
        combined = shade(combined, field_self, request.alpha)

    v_out = apply_makeup(v_x, combined)
    out_lab = denormalize_values(v_out, record, view_x.parsing)
    bg = ~view_x.parsing.face_mask
    out_lab[bg] = view_x.lab[bg]
    out_rgb = Image(out_lab, colorspace="decorrelated-lab").to_rgb().data

    residual = out_rgb - view_x.rgb
    residual[bg] = 0.0
    res_full = upsample_residual_masked(residual, view_x.parsing, src.parsing)

    out_full = src.image.data.copy()
    face_full = src.parsing.face_mask
    out_full[face_full] = np.clip(out_full[face_full] + res_full[face_full], 0.0, 1.0)

    face_work = view_x.parsing.face_mask
    coverage = float(cover_rows[face_work & governed].mean()) if (face_work & governed).any() else 0.0
    diagnostics = {
        "coverage": coverage,
        "mode": request.mode,
        "alpha": request.alpha,
        "w": request.w,
        "grid": list(grid.shape),
        "per_reference": [_attention_stats(a, view_x.parsing) for a in attns],
    }
    return TransferResult(output=Image(out_full), coverage=coverage, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# histogram matching and quality metrics
# ---------------------------------------------------------------------------


def histogram_match_report(x: FaceBundle, y: FaceBundle) -> tuple[Image, list[str]]:
    """Region-wise histogram matching of x toward y, plus skipped-region flags.

    For each face region and channel, x's values are remapped by sorted-rank
    lookup into y's value distribution for the same region (stable ties by
    pixel index). Regions empty in y fall back to copying x and are flagged.
    """
    out = x.image.to_rgb().data.copy()
    ydata = y.image.to_rgb().data
    skipped = []
    for label in FACE_LABELS:
        mx = x.parsing.labels == label
        my = y.parsing.labels == label
        if not mx.any():
            continue
        if not my.any():
            skipped.append(REGION_NAMES[label])
            continue
        for ch in range(3):
            xv = x.image.data[mx, ch]
            ys = np.sort(ydata[my, ch])
            order = np.argsort(xv, kind="stable")
            take = np.minimum(
                ((np.arange(xv.size) + 0.5) * ys.size / xv.size).astype(np.int64),
                ys.size - 1,
            )
            matched = np.empty_like(xv)
            matched[order] = ys[take]
            out[mx, ch] = matched
    return Image(out), skipped


def histogram_match(x: FaceBundle, y: FaceBundle) -> Image:
    """HM(x, y): x's per-region colour distributions remapped to y's."""
    return histogram_match_report(x, y)[0]


def makeup_distance(a: Image, b: Image, parsing: ParsingMap) -> dict:
    """Per-region mean squared error between two images."""
    da, db = a.to_rgb().data, b.to_rgb().data
    if da.shape != db.shape or da.shape[:2] != parsing.labels.shape:
        raise DimensionError("makeup_distance operands disagree on dimensions")
    out = {}
    for label in FACE_LABELS:
        mask = parsing.labels == label
        out[REGION_NAMES[label]] = (
            float(((da[mask] - db[mask]) ** 2).mean()) if mask.any() else 0.0
        )
    return out


def cycle_metric(x: FaceBundle, y: FaceBundle, **kwargs) -> float:
    """Round-trip error: transfer y's makeup onto x, then x's own makeup back,
    and measure the mean absolute face-pixel gap to the original."""
    forward = transfer(TransferRequest(source=x, references=(y,), **kwargs))
    # geometry is untouched by transfer, so x's landmarks/parsing still apply
    intermediate = FaceBundle(
        image=forward.output, landmarks=x.landmarks, parsing=x.parsing
    )
    back = transfer(TransferRequest(source=intermediate, references=(x,), **kwargs))
    face = x.parsing.face_mask
    return float(np.abs(back.output.data[face] - x.image.data[face]).mean())
