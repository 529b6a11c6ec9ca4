"""Attentive morphing core: relative-position features, region-masked
attention between source and reference pixels, and morphing of makeup fields
through the attention weights.

The attention here is deliberately feature-agnostic: callers supply whatever
per-pixel visual features they like (the engine passes blurred decorrelated
colour channels). Position handling, region masking, softmax and morphing are
exact regardless of the feature source.

Two evaluation paths exist for the attention matrix. The region-bucketed path
computes each same-region block only, dropping the cost from (HW)^2 to
sum_r |r_x|*|r_y|; the dense path computes every pixel pair and applies the
region indicator afterwards. The dense path is kept as the reference oracle
and both must agree to float precision.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from PIL import Image as PILImage

from .facedata import BACKGROUND, FACE_LABELS, LandmarkSet, ParsingMap, WorkingGrid

# Lower clamp for makeup scale fields; avoids zero/negative scaling from
# degenerate (constant-region) statistics.
GAMMA_MIN = 1e-3

MODE_BROADCAST = "broadcast"
MODE_PER_CHANNEL = "per-channel"

N_POS_CHANNELS = 136  # 68 x-differences followed by 68 y-differences


class DimensionError(ValueError):
    """Operand grids disagree on their dimensions."""


def check_feature_grid(grid: np.ndarray) -> np.ndarray:
    """Validate a (C, H, W) visual feature tensor."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] < 1:
        raise DimensionError(f"feature grid must be (C, H, W) with C >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature grid contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# relative position features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelPosField:
    """Per-pixel coordinate differences to the 68 landmark anchors.

    `raw[r, c, k]` is pixel-x minus landmark-k-x for k < 68 and the
    y-analogue for k >= 68. `unit` is the same field divided by its per-pixel
    two-norm so faces of different sizes compare equally; an all-zero vector
    (impossible with distinct anchors) is kept zero and flagged.
    """

    raw: np.ndarray  # (H, W, 136)
    unit: np.ndarray  # (H, W, 136)
    zero_mask: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape[:2]


def rel_pos_features(landmarks: LandmarkSet, grid: WorkingGrid) -> RelPosField:
    """Build the 136-channel relative-position field on the working grid."""
    lx = landmarks.points[:, 0]
    ly = landmarks.points[:, 1]
    h, w = grid.shape
    raw = np.empty((h, w, N_POS_CHANNELS), dtype=np.float64)
    raw[:, :, :68] = np.arange(w, dtype=np.float64)[None, :, None] - lx[None, None, :]
    raw[:, :, 68:] = np.arange(h, dtype=np.float64)[:, None, None] - ly[None, None, :]
    norms = np.linalg.norm(raw, axis=2)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    unit = raw / safe[:, :, None]
    return RelPosField(raw=raw, unit=unit, zero_mask=zero)


# ---------------------------------------------------------------------------
# attention matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionMatrix:
    """Row-stochastic sparse attention restricted to same-region pixel pairs.

    Stored as one dense block per face region: rows are source pixels of that
    region, columns the reference pixels of the same region. Background rows,
    and rows whose region has no reference pixels, are empty and flagged.
    """

    src_shape: tuple[int, int]
    ref_shape: tuple[int, int]
    row_region: np.ndarray  # (HW_src,) uint8 parsing label per row
    row_nonempty: np.ndarray  # (HW_src,) bool
    blocks: dict  # label -> (src_idx, ref_idx, weights (n_src, n_ref))

    @property
    def n_src(self) -> int:
        return self.src_shape[0] * self.src_shape[1]

    @property
    def n_ref(self) -> int:
        return self.ref_shape[0] * self.ref_shape[1]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Sparse row i: (reference flat indices, weights). Empty rows give ([], [])."""
        label = int(self.row_region[i])
        if label == BACKGROUND or label not in self.blocks:
            return np.empty(0, dtype=np.int64), np.empty(0)
        src_idx, ref_idx, weights = self.blocks[label]
        pos = np.searchsorted(src_idx, i)
        if pos >= len(src_idx) or src_idx[pos] != i:
            return np.empty(0, dtype=np.int64), np.empty(0)
        return ref_idx, weights[pos]

    def dense_rows(self, start: int, stop: int) -> np.ndarray:
        """Materialize rows [start, stop) as a dense (stop-start, HW_ref) slab."""
        out = np.zeros((stop - start, self.n_ref))
        for _, (src_idx, ref_idx, weights) in sorted(self.blocks.items()):
            sel = (src_idx >= start) & (src_idx < stop)
            if sel.any():
                out[np.ix_(src_idx[sel] - start, ref_idx)] = weights[sel]
        return out

    def to_dense(self) -> np.ndarray:
        return self.dense_rows(0, self.n_src)

    def coverage(self, parsing: ParsingMap) -> float:
        """Fraction of face pixels whose attention row is nonempty."""
        face = parsing.labels.ravel() != BACKGROUND
        if not face.any():
            return 0.0
        return float(self.row_nonempty[face].mean())


def _embed(v: np.ndarray, p: RelPosField, m: ParsingMap, w: float) -> np.ndarray:
    """Per-pixel attention embedding [w*v_i, unit-position_i], flattened to (HW, C+136)."""
    v = check_feature_grid(v)
    c, h, wd = v.shape
    if p.shape != (h, wd) or (m.height, m.width) != (h, wd):
        raise DimensionError(
            f"feature {v.shape[1:]}, position {p.shape} and parsing "
            f"{(m.height, m.width)} grids disagree"
        )
    vis = (w * v).reshape(c, h * wd).T
    pos = p.unit.reshape(h * wd, N_POS_CHANNELS)
    return np.concatenate([vis, pos], axis=1)


def attentive_matrix(
    v_x: np.ndarray,
    p_x: RelPosField,
    m_x: ParsingMap,
    v_y: np.ndarray,
    p_y: RelPosField,
    m_y: ParsingMap,
    w: float = 0.01,
) -> AttentionMatrix:
    """Region-bucketed attention between source and reference pixels.

    Weight (i, j) is the masked softmax over j of the dot product between
    [w*v_i, unit_pos_i] and [w*v_j, unit_pos_j], restricted to pairs whose
    parsing labels agree. Rows evaluate in fixed reference-index order, so
    the result is bit-stable regardless of caller-side parallelism.
    """
    if w < 0:
        raise ValueError(f"visual feature weight must be >= 0, got {w}")
    q_x = _embed(v_x, p_x, m_x, w)
    q_y = _embed(v_y, p_y, m_y, w)
    if q_x.shape[1] != q_y.shape[1]:
        raise DimensionError(
            f"source and reference feature channel counts differ: "
            f"{q_x.shape[1] - N_POS_CHANNELS} vs {q_y.shape[1] - N_POS_CHANNELS}"
        )

    mx = m_x.labels.ravel()
    my = m_y.labels.ravel()
    row_nonempty = np.zeros(mx.size, dtype=bool)
    blocks = {}
    for label in FACE_LABELS:
        src_idx = np.flatnonzero(mx == label)
        if src_idx.size == 0:
            continue
        ref_idx = np.flatnonzero(my == label)
        if ref_idx.size == 0:
            continue  # region absent in reference: rows stay empty, flagged off
        scores = q_x[src_idx] @ q_y[ref_idx].T
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        blocks[int(label)] = (src_idx, ref_idx, scores)
        row_nonempty[src_idx] = True

    return AttentionMatrix(
        src_shape=(m_x.height, m_x.width),
        ref_shape=(m_y.height, m_y.width),
        row_region=mx.copy(),
        row_nonempty=row_nonempty,
        blocks=blocks,
    )


def iter_dense_attention_rows(
    v_x: np.ndarray,
    p_x: RelPosField,
    m_x: ParsingMap,
    v_y: np.ndarray,
    p_y: RelPosField,
    m_y: ParsingMap,
    w: float = 0.01,
    chunk: int = 2048,
) -> Iterator[tuple[int, int, np.ndarray]]:
    """Reference path: evaluate every pixel pair, then mask by the indicator.

    Yields (start, stop, rows) slabs of the full (HW_src, HW_ref) matrix so
    callers can verify or time the dense path without materializing it.
    """
    if w < 0:
        raise ValueError(f"visual feature weight must be >= 0, got {w}")
    q_x = _embed(v_x, p_x, m_x, w)
    q_y = _embed(v_y, p_y, m_y, w)
    mx = m_x.labels.ravel()
    my = m_y.labels.ravel()
    for start in range(0, q_x.shape[0], chunk):
        stop = min(start + chunk, q_x.shape[0])
        scores = q_x[start:stop] @ q_y.T
        mask = (mx[start:stop, None] == my[None, :]) & (mx[start:stop, None] != BACKGROUND)
        scores[~mask] = -np.inf
        peak = scores.max(axis=1, keepdims=True)
        rows = np.where(mask, np.exp(scores - np.where(np.isfinite(peak), peak, 0.0)), 0.0)
        denom = rows.sum(axis=1, keepdims=True)
        np.divide(rows, denom, out=rows, where=denom > 0)
        yield start, stop, rows


def attentive_matrix_dense(
    v_x: np.ndarray,
    p_x: RelPosField,
    m_x: ParsingMap,
    v_y: np.ndarray,
    p_y: RelPosField,
    m_y: ParsingMap,
    w: float = 0.01,
) -> np.ndarray:
    """Materialized dense oracle; only sensible for small grids."""
    parts = [
        rows
        for _, _, rows in iter_dense_attention_rows(v_x, p_x, m_x, v_y, p_y, m_y, w)
    ]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# makeup fields and morphing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MakeupField:
    """Paired multiplicative/additive makeup grids (the gamma/beta pair).

    Broadcast mode stores a single plane applied to every feature channel;
    per-channel mode stores one plane per channel.
    """

    gamma: np.ndarray  # (1 or C, H, W)
    beta: np.ndarray
    mode: str = MODE_PER_CHANNEL

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if g.ndim != 3 or g.shape != b.shape:
            raise DimensionError(
                f"gamma/beta must be matching (K, H, W) arrays, got {g.shape} vs {b.shape}"
            )
        if self.mode not in (MODE_BROADCAST, MODE_PER_CHANNEL):
            raise ValueError(f"unknown makeup field mode {self.mode!r}")
        if self.mode == MODE_BROADCAST and g.shape[0] != 1:
            raise DimensionError(f"broadcast field must have one plane, got {g.shape[0]}")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(b))):
            raise ValueError("makeup field contains non-finite values")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)

    @property
    def planes(self) -> int:
        return self.gamma.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.gamma.shape[1:]


def identity_field(shape: tuple[int, int], planes: int = 1,
                   mode: str = MODE_BROADCAST) -> MakeupField:
    """The no-modulation field: gamma 1, beta 0 everywhere."""
    return MakeupField(
        gamma=np.ones((planes,) + shape),
        beta=np.zeros((planes,) + shape),
        mode=mode,
    )


def morph_field(a: AttentionMatrix, field: MakeupField) -> MakeupField:
    """Adapt a reference makeup field to source geometry: row-weighted sums.

    Each source pixel's gamma/beta is the attention-weighted average of the
    reference values its row attends to. Empty rows get the no-modulation
    sentinel (gamma 1, beta 0).
    """
    if field.grid_shape != a.ref_shape:
        raise DimensionError(
            f"field grid {field.grid_shape} does not match attention reference "
            f"grid {a.ref_shape}"
        )
    k = field.planes
    gamma_flat = field.gamma.reshape(k, -1)
    beta_flat = field.beta.reshape(k, -1)
    out_gamma = np.ones((k, a.n_src))
    out_beta = np.zeros((k, a.n_src))
    for _, (src_idx, ref_idx, weights) in sorted(a.blocks.items()):
        out_gamma[:, src_idx] = gamma_flat[:, ref_idx] @ weights.T
        out_beta[:, src_idx] = beta_flat[:, ref_idx] @ weights.T
    return MakeupField(
        gamma=out_gamma.reshape((k,) + a.src_shape),
        beta=out_beta.reshape((k,) + a.src_shape),
        mode=field.mode,
    )


def expand_field(field: MakeupField, channels: int) -> MakeupField:
    """Duplicate a broadcast field along the channel dimension.

    Per-channel fields pass through unchanged (their channel count must
    already agree).
    """
    if field.mode == MODE_PER_CHANNEL:
        if field.planes != channels:
            raise DimensionError(
                f"per-channel field has {field.planes} planes, expected {channels}"
            )
        return field
    return MakeupField(
        gamma=np.repeat(field.gamma, channels, axis=0),
        beta=np.repeat(field.beta, channels, axis=0),
        mode=MODE_PER_CHANNEL,
    )


# ---------------------------------------------------------------------------
# attention inspection
# ---------------------------------------------------------------------------


def attention_row(a: AttentionMatrix, pixel: tuple[int, int]) -> np.ndarray:
    """Reshape one source pixel's attention row to a dense reference heat map.

    `pixel` is (row, col) on the source grid. Background or uncovered pixels
    give an all-zero map.
    """
    r, c = pixel
    h, w = a.src_shape
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"pixel ({r}, {c}) outside source grid {h}x{w}")
    ref_idx, weights = a.row(r * w + c)
    out = np.zeros(a.n_ref)
    out[ref_idx] = weights
    return out.reshape(a.ref_shape)


def attention_row_json(a: AttentionMatrix, pixel: tuple[int, int]) -> dict:
    """Sparse-row export: {"pixel": [r, c], "entries": [[r', c', w], ...]}."""
    r, c = pixel
    h, w = a.src_shape
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"pixel ({r}, {c}) outside source grid {h}x{w}")
    ref_idx, weights = a.row(r * w + c)
    wr = a.ref_shape[1]
    entries = [
        [int(j // wr), int(j % wr), float(v)] for j, v in zip(ref_idx, weights)
    ]
    return {"pixel": [int(r), int(c)], "entries": entries}


def attention_map_png(heat: np.ndarray) -> bytes:
    """Encode a heat map as grayscale PNG, row-normalized to [0, 255]."""
    peak = heat.max()
    scaled = heat / peak if peak > 0 else heat
    u8 = np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(u8, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def attention_row_json_bytes(a: AttentionMatrix, pixel: tuple[int, int]) -> bytes:
    return json.dumps(attention_row_json(a, pixel)).encode()
