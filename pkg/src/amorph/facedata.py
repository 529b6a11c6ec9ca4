"""Face bundle data types, validated ingestion, resampling, and synthetic faces.

Every downstream stage (attention, makeup statistics, compositing) speaks
through the types defined here so that resolution, colour-space and label
assumptions are enforced in exactly one place.  Landmarks and parsing maps
are external artifacts ingested from files; nothing in this package runs a
detector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage
from skimage.color import lab2rgb, rgb2lab

# Region labels of the parsing map. Attention is only ever computed between
# pixels that share one of these labels; BACKGROUND pixels never attend.
BACKGROUND = 0
SKIN = 1
LIP = 2
EYES = 3

REGION_LABELS = (BACKGROUND, SKIN, LIP, EYES)
FACE_LABELS = (SKIN, LIP, EYES)
REGION_NAMES = {BACKGROUND: "background", SKIN: "skin", LIP: "lip", EYES: "eyes"}
NAME_TO_LABEL = {v: k for k, v in REGION_NAMES.items()}

N_LANDMARKS = 68

COLORSPACE_RGB = "linear-rgb"
COLORSPACE_LAB = "decorrelated-lab"


class BundleError(ValueError):
    """A face bundle or one of its parts violates its data contract."""


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def check_image_array(data: np.ndarray, *, unit_range: bool = True) -> np.ndarray:
    """Validate an (H, W, 3) float image array and return it as float64."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise BundleError(f"expected (H, W, 3) image array, got shape {arr.shape}")
    if arr.shape[0] < 8 or arr.shape[1] < 8:
        raise BundleError(f"image too small: {arr.shape[1]}x{arr.shape[0]}, minimum 8x8")
    if not np.all(np.isfinite(arr)):
        raise BundleError("image contains non-finite values")
    if unit_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise BundleError(
            f"image samples outside [0, 1]: min {arr.min():.4f}, max {arr.max():.4f}"
        )
    return arr


def check_landmarks(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Validate a 68-point landmark array against image bounds.

    Out-of-bounds points are a contract violation, never silently clamped.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (N_LANDMARKS, 2):
        n = pts.shape[0] if pts.ndim == 2 else "?"
        raise BundleError(f"landmark count must be {N_LANDMARKS}, got {n}")
    if not np.all(np.isfinite(pts)):
        raise BundleError("landmarks contain non-finite values")
    x, y = pts[:, 0], pts[:, 1]
    if x.min() < 0 or y.min() < 0 or x.max() > width - 1 or y.max() > height - 1:
        k = int(np.argmax((x < 0) | (y < 0) | (x > width - 1) | (y > height - 1)))
        raise BundleError(
            f"out-of-bounds landmark {k}: ({pts[k, 0]:.2f}, {pts[k, 1]:.2f}) "
            f"for {width}x{height} image"
        )
    return pts


def check_parsing_labels(labels: np.ndarray) -> np.ndarray:
    """Validate a per-pixel label raster: values in {0,1,2,3}, non-empty face."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise BundleError(f"parsing map must be 2-d, got shape {arr.shape}")
    bad = ~np.isin(arr, REGION_LABELS)
    if bad.any():
        vals = sorted(int(v) for v in np.unique(arr[bad]))
        raise BundleError(f"unknown label values in parsing map: {vals}")
    arr = arr.astype(np.uint8)
    if not np.isin(arr, FACE_LABELS).any():
        raise BundleError("parsing map has no face pixels (all background)")
    return arr


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Image:
    """Colour raster with unit-interval samples in a known working space."""

    data: np.ndarray  # (H, W, 3) float64, row-major
    colorspace: str = COLORSPACE_RGB

    def __post_init__(self):
        object.__setattr__(
            self,
            "data",
            check_image_array(self.data, unit_range=self.colorspace == COLORSPACE_RGB),
        )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_lab(self) -> "Image":
        if self.colorspace == COLORSPACE_LAB:
            return self
        return Image(rgb2lab(self.data), colorspace=COLORSPACE_LAB)

    def to_rgb(self) -> "Image":
        if self.colorspace == COLORSPACE_RGB:
            return self
        rgb = np.clip(lab2rgb(self.data), 0.0, 1.0)
        return Image(rgb, colorspace=COLORSPACE_RGB)


@dataclass(frozen=True)
class LandmarkSet:
    """68 anchor points in pixel coordinates (x rightward, y downward)."""

    points: np.ndarray  # (68, 2) float64, [x, y] per row

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            n = pts.shape[0] if pts.ndim == 2 else "?"
            raise BundleError(f"landmark count must be {N_LANDMARKS}, got {n}")
        if not np.all(np.isfinite(pts)):
            raise BundleError("landmarks contain non-finite values")
        object.__setattr__(self, "points", pts)

    def scaled(self, sx: float, sy: float) -> "LandmarkSet":
        return LandmarkSet(self.points * np.array([sx, sy]))


@dataclass(frozen=True)
class ParsingMap:
    """Per-pixel region labels: 0 background, 1 skin, 2 lip, 3 eyes."""

    labels: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        object.__setattr__(self, "labels", check_parsing_labels(self.labels))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def face_mask(self) -> np.ndarray:
        return self.labels != BACKGROUND

    def region_mask(self, label: int) -> np.ndarray:
        return self.labels == label


@dataclass(frozen=True)
class FaceBundle:
    """An image plus its externally-produced landmarks and parsing map."""

    image: Image
    landmarks: LandmarkSet
    parsing: ParsingMap

    def __post_init__(self):
        w, h = self.image.width, self.image.height
        if (self.parsing.width, self.parsing.height) != (w, h):
            raise BundleError(
                f"parsing map {self.parsing.width}x{self.parsing.height} does not "
                f"match image {w}x{h}"
            )
        check_landmarks(self.landmarks.points, w, h)

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height


@dataclass(frozen=True)
class WorkingGrid:
    """Downsampled processing resolution; the (HW)^2 attention cost lives here."""

    height: int = 64
    width: int = 64

    def __post_init__(self):
        for n in (self.height, self.width):
            if n < 16 or n > 256 or (n & (n - 1)) != 0:
                raise BundleError(
                    f"working grid dims must be powers of two in [16, 256], got {n}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def scale_from(self, width: int, height: int) -> tuple[float, float]:
        """(sx, sy) factors mapping full-resolution coordinates to grid coordinates."""
        return (self.width / width, self.height / height)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def load_image(path: str | Path) -> Image:
    """Load an 8-bit RGB PNG as unit-interval floats."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)


def save_image(image: Image, path: str | Path) -> None:
    """Write an image as 8-bit RGB PNG (values rounded, not dithered)."""
    PILImage.fromarray(encode_u8(image)).save(path, format="PNG")


def encode_u8(image: Image) -> np.ndarray:
    rgb = image.to_rgb().data
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def load_landmarks(path, width: int, height: int) -> LandmarkSet:
    """Load a JSON array of 68 [x, y] pairs and validate against image bounds.

    Accepts a filesystem path or a readable file object.
    """
    if hasattr(path, "read"):
        raw = json.load(path)
    else:
        with open(path) as fh:
            raw = json.load(fh)
    pts = np.asarray(raw, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise BundleError(f"landmark file {path} is not an array of [x, y] pairs")
    return LandmarkSet(check_landmarks(pts, width, height))


def save_landmarks(landmarks: LandmarkSet, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([[float(x), float(y)] for x, y in landmarks.points], fh)


def load_parsing(path: str | Path) -> ParsingMap:
    """Load a single-channel 8-bit PNG of region labels."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            im = im.convert("L")
        arr = np.asarray(im)
    return ParsingMap(check_parsing_labels(arr))


def save_parsing(parsing: ParsingMap, path: str | Path) -> None:
    PILImage.fromarray(parsing.labels, mode="L").save(path, format="PNG")


def load_bundle(
    image_path: str | Path,
    landmarks_path: str | Path,
    parsing_path: str | Path,
) -> FaceBundle:
    """Load and cross-validate an image / landmarks / parsing trio."""
    image = load_image(image_path)
    parsing = load_parsing(parsing_path)
    if (parsing.width, parsing.height) != (image.width, image.height):
        raise BundleError(
            f"parsing raster {parsing.width}x{parsing.height} does not match "
            f"image {image.width}x{image.height}"
        )
    landmarks = load_landmarks(landmarks_path, image.width, image.height)
    return FaceBundle(image=image, landmarks=landmarks, parsing=parsing)


def load_bundle_dir(directory: str | Path) -> FaceBundle:
    """Load a bundle from a directory holding image.png / landmarks.json / parsing.png."""
    d = Path(directory)
    return load_bundle(d / "image.png", d / "landmarks.json", d / "parsing.png")


def save_bundle_dir(bundle: FaceBundle, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_image(bundle.image, d / "image.png")
    save_landmarks(bundle.landmarks, d / "landmarks.json")
    save_parsing(bundle.parsing, d / "parsing.png")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

# Majority pooling of parsing labels breaks ties in this order so that thin
# lip/eye regions survive downsampling.
_TIE_PRIORITY = (LIP, EYES, SKIN, BACKGROUND)


def _bin_indices(n_full: int, n_work: int) -> np.ndarray:
    if n_work > n_full:
        raise BundleError(f"working grid dim {n_work} exceeds input dim {n_full}")
    return (np.arange(n_full) * n_work) // n_full


def downsample_image(data: np.ndarray, grid: WorkingGrid) -> np.ndarray:
    """Area-average an (H, W, C) array onto the working grid."""
    hf, wf = data.shape[:2]
    ri = _bin_indices(hf, grid.height)
    ci = _bin_indices(wf, grid.width)
    flat_bin = ri[:, None] * grid.width + ci[None, :]
    out = np.zeros((grid.n_pixels, data.shape[2]), dtype=np.float64)
    counts = np.bincount(flat_bin.ravel(), minlength=grid.n_pixels)
    for ch in range(data.shape[2]):
        out[:, ch] = np.bincount(
            flat_bin.ravel(), weights=data[:, :, ch].ravel(), minlength=grid.n_pixels
        )
    out /= counts[:, None]
    return out.reshape(grid.height, grid.width, data.shape[2])


def downsample_parsing(labels: np.ndarray, grid: WorkingGrid) -> np.ndarray:
    """Mode-pool labels per grid cell; ties broken lip > eyes > skin > background."""
    hf, wf = labels.shape
    ri = _bin_indices(hf, grid.height)
    ci = _bin_indices(wf, grid.width)
    flat_bin = (ri[:, None] * grid.width + ci[None, :]).ravel()
    counts = np.zeros((grid.n_pixels, len(REGION_LABELS)), dtype=np.int64)
    np.add.at(counts, (flat_bin, labels.ravel().astype(np.int64)), 1)
    best = np.full(grid.n_pixels, BACKGROUND, dtype=np.uint8)
    best_count = np.zeros(grid.n_pixels, dtype=np.int64)
    for label in _TIE_PRIORITY[::-1]:
        c = counts[:, label]
        take = c >= best_count  # later (higher-priority) labels win ties
        best[take] = label
        best_count[take] = c[take]
    return best.reshape(grid.shape)


def downsample_bundle(
    bundle: FaceBundle, grid: WorkingGrid
) -> tuple[Image, LandmarkSet, ParsingMap]:
    """Bring a bundle to working resolution.

    The image is area-averaged, the parsing map mode-pooled, and landmark
    coordinates multiplied by the resolution ratio.
    """
    sx, sy = grid.scale_from(bundle.width, bundle.height)
    image = Image(downsample_image(bundle.image.data, grid), bundle.image.colorspace)
    landmarks = bundle.landmarks.scaled(sx, sy)
    parsing = ParsingMap(downsample_parsing(bundle.parsing.labels, grid))
    return image, landmarks, parsing


def upsample_bilinear(data: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear upsample of an (H, W) or (H, W, C) array to `shape` (center-aligned)."""
    hs, ws = data.shape[:2]
    hf, wf = shape
    rows = np.clip((np.arange(hf) + 0.5) * hs / hf - 0.5, 0, hs - 1)
    cols = np.clip((np.arange(wf) + 0.5) * ws / wf - 0.5, 0, ws - 1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, hs - 1)
    c1 = np.minimum(c0 + 1, ws - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    if data.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = data[r0][:, c0] * (1 - fc) + data[r0][:, c1] * fc
    bot = data[r1][:, c0] * (1 - fc) + data[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def upsample_residual_masked(
    residual: np.ndarray,
    parsing_work: ParsingMap,
    parsing_full: ParsingMap,
) -> np.ndarray:
    """Upsample a working-resolution residual without bleeding across regions.

    Plain bilinear interpolation mixes residual values from neighbouring
    regions at boundaries (e.g. lip residual leaking onto skin). Here each
    face region is upsampled with its own mask-weighted bilinear kernel, and
    full-resolution pixels only read residual from same-region cells. Pixels
    whose bilinear support holds no same-region cell fall back to the
    unmasked interpolation.
    """
    shape = (parsing_full.height, parsing_full.width)
    out = np.zeros(shape + (residual.shape[2],), dtype=np.float64)
    fallback = upsample_bilinear(residual, shape)
    for label in FACE_LABELS:
        sel_full = parsing_full.labels == label
        if not sel_full.any():
            continue
        mask = (parsing_work.labels == label).astype(np.float64)
        num = upsample_bilinear(residual * mask[:, :, None], shape)
        den = upsample_bilinear(mask, shape)
        ok = sel_full & (den > 1e-9)
        out[ok] = num[ok] / den[ok][:, None]
        miss = sel_full & ~ok
        if miss.any():
            out[miss] = fallback[miss]
    return out


# ---------------------------------------------------------------------------
# synthetic faces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Pose, expression and colouring of a procedural test face.

    Colours left as None are drawn from a seed-jittered default palette;
    explicit colours are used verbatim (flat fill), which keeps region
    statistics exact for quantitative tests.
    """

    size: int = 256
    rotation_deg: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    shift_x: float = 0.0  # face center offset from image center, px
    shift_y: float = 0.0
    eye_openness: float = 1.0  # 0 closes the eyes (region vanishes)
    mouth_size: float = 1.0
    skin_color: tuple[float, float, float] | None = None
    lip_color: tuple[float, float, float] | None = None
    eye_color: tuple[float, float, float] | None = None
    background_color: tuple[float, float, float] | None = None
    noise: float = 0.0  # amplitude of the multi-scale colour mottling


_DEFAULT_PALETTE = {
    "background": (0.16, 0.18, 0.21),
    "skin": (0.80, 0.62, 0.52),
    "lip": (0.64, 0.37, 0.40),
    "eyes": (0.24, 0.18, 0.15),
}


def _ellipse_points(cx, cy, rx, ry, angles):
    return np.stack([cx + rx * np.cos(angles), cy + ry * np.sin(angles)], axis=1)


def _canonical_face(rng: np.random.Generator, params: SynthParams):
    """Canonical (unrotated, unscaled) geometry: shapes and 68 landmarks.

    The face center is never jittered so callers can reproduce the pose
    transform exactly; seed variation enters through the radii.
    """
    s = params.size
    cx = s / 2 + params.shift_x
    cy = s / 2 + params.shift_y
    rx = 0.33 * s * rng.uniform(0.95, 1.05)
    ry = 0.41 * s * rng.uniform(0.95, 1.05)

    eye_dx = 0.42 * rx * rng.uniform(0.95, 1.05)
    eye_cy = cy - 0.24 * ry
    eye_rx = 0.21 * rx
    eye_ry = 0.13 * ry * params.eye_openness
    lip_cy = cy + 0.55 * ry
    lip_rx = 0.30 * rx * params.mouth_size
    lip_ry = 0.145 * ry * params.mouth_size

    shapes = {
        "face": (cx, cy, rx, ry),
        "eye_l": (cx - eye_dx, eye_cy, eye_rx, eye_ry),
        "eye_r": (cx + eye_dx, eye_cy, eye_rx, eye_ry),
        "lip": (cx, lip_cy, lip_rx, lip_ry),
    }

    pts = []
    # jaw: 17 points along the lower face contour, left ear through chin to right ear
    pts.append(_ellipse_points(cx, cy, 0.96 * rx, 0.96 * ry, np.linspace(np.pi, 0.0, 17)))
    # brows: 5 points above each eye
    for ex in (cx - eye_dx, cx + eye_dx):
        u = np.linspace(-1.0, 1.0, 5)
        pts.append(np.stack([ex + 1.15 * eye_rx * u, np.full(5, eye_cy - 2.6 * eye_ry)], axis=1))
    # nose: 4 bridge + 5 base points
    bridge_y = np.linspace(cy - 0.16 * ry, cy + 0.16 * ry, 4)
    pts.append(np.stack([np.full(4, cx), bridge_y], axis=1))
    u = np.linspace(-1.0, 1.0, 5)
    pts.append(np.stack([cx + 0.10 * rx * u, np.full(5, cy + 0.24 * ry)], axis=1))
    # eyes: 6 points on each eye outline (kept well inside the region)
    eye_angles = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    for key in ("eye_l", "eye_r"):
        ex, ey, erx, ery = shapes[key]
        pts.append(_ellipse_points(ex, ey, 0.75 * erx, 0.75 * ery, eye_angles))
    # lips: 12 outer + 8 inner points
    pts.append(_ellipse_points(cx, lip_cy, 0.90 * lip_rx, 0.90 * lip_ry,
                               np.linspace(0, 2 * np.pi, 12, endpoint=False)))
    pts.append(_ellipse_points(cx, lip_cy, 0.45 * lip_rx, 0.45 * lip_ry,
                               np.linspace(0, 2 * np.pi, 8, endpoint=False)))

    landmarks = np.concatenate(pts, axis=0)
    assert landmarks.shape == (N_LANDMARKS, 2)
    return shapes, landmarks, (cx, cy)


def synth_face(seed: int, params: SynthParams | None = None) -> FaceBundle:
    """Build a deterministic procedural face bundle for tests and demos.

    The same seed always yields the identical bundle; rotation is applied
    about the face center after all seeded jitter, so rotated and unrotated
    calls with one seed correspond point-for-point.
    """
    params = params or SynthParams()
    s = params.size
    if s < 16:
        raise BundleError(f"synthetic face size {s} too small")
    if params.mouth_size <= 0:
        raise BundleError("degenerate synthetic face parameters (zero-area mouth)")

    if params.scale_x <= 0 or params.scale_y <= 0:
        raise BundleError("degenerate synthetic face parameters (non-positive scale)")

    rng = np.random.default_rng(seed)
    shapes, canon_pts, (cx, cy) = _canonical_face(rng, params)

    theta = np.deg2rad(params.rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    scale = np.diag([params.scale_x, params.scale_y])
    fwd = rot @ scale
    inv = np.linalg.inv(fwd)
    center = np.array([cx, cy])

    landmarks = (canon_pts - center) @ fwd.T + center

    # rasterize labels by testing pixel centers in the canonical frame
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    pos = np.stack([xx.ravel(), yy.ravel()], axis=1)
    q = (pos - center) @ inv.T + center

    def inside(shape_key):
        ex, ey, erx, ery = shapes[shape_key]
        if erx <= 0 or ery <= 0:
            return np.zeros(len(q), dtype=bool)
        return ((q[:, 0] - ex) / erx) ** 2 + ((q[:, 1] - ey) / ery) ** 2 <= 1.0

    labels = np.zeros(s * s, dtype=np.uint8)
    labels[inside("face")] = SKIN
    labels[inside("lip")] = LIP
    labels[inside("eye_l") | inside("eye_r")] = EYES
    labels = labels.reshape(s, s)
    if not (labels != BACKGROUND).any():
        raise BundleError("degenerate synthetic face parameters (zero area)")

    explicit_colors = {
        "background": params.background_color,
        "skin": params.skin_color,
        "lip": params.lip_color,
        "eyes": params.eye_color,
    }
    palette = {}
    for name, default in _DEFAULT_PALETTE.items():
        jitter = rng.uniform(-0.03, 0.03, size=3)  # drawn always, to keep seeds aligned
        if explicit_colors[name] is not None:
            palette[name] = np.asarray(explicit_colors[name], dtype=np.float64)
        else:
            palette[name] = np.clip(np.asarray(default) + jitter, 0.02, 0.98)

    lut = np.stack([palette["background"], palette["skin"], palette["lip"], palette["eyes"]])
    data = lut[labels]
    if params.noise > 0:
        # multi-scale smooth mottling (not per-pixel static) so the texture
        # survives downsampling and warps coherently, like real skin texture
        for octave in (90, 45, 23, 11.6, 5.8):
            sigma = s / octave
            white = rng.standard_normal((s, s, 3))
            field = np.stack(
                [ndimage.gaussian_filter(white[:, :, c], sigma=sigma) for c in range(3)],
                axis=2,
            )
            data = data + field / field.std() * params.noise
        data = np.clip(data, 0.0, 1.0)

    return FaceBundle(
        image=Image(data),
        landmarks=LandmarkSet(landmarks),
        parsing=ParsingMap(labels),
    )


# ---------------------------------------------------------------------------
# affine warps (ground-truth correspondence for attention tests)
# ---------------------------------------------------------------------------


def affine_matrix(
    *,
    translate: tuple[float, float] = (0.0, 0.0),
    rotate_deg: float = 0.0,
    scale: tuple[float, float] = (1.0, 1.0),
    center: tuple[float, float] | None = None,
) -> np.ndarray:
    """Compose a 3x3 forward affine: scale, then rotate about `center`, then translate."""
    t = np.deg2rad(rotate_deg)
    rs = np.array(
        [
            [np.cos(t) * scale[0], -np.sin(t) * scale[1]],
            [np.sin(t) * scale[0], np.cos(t) * scale[1]],
        ]
    )
    m = np.eye(3)
    m[:2, :2] = rs
    if center is not None:
        c = np.asarray(center, dtype=np.float64)
        m[:2, 2] = c - rs @ c
    m[:2, 2] += np.asarray(translate, dtype=np.float64)
    return m


def apply_affine_points(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    return points @ m[:2, :2].T + m[:2, 2]


def warp_bundle(bundle: FaceBundle, matrix: np.ndarray) -> FaceBundle:
    """Warp a bundle under a forward affine transform.

    Landmarks are mapped exactly; the image is inverse-warped with bilinear
    sampling and the parsing map with nearest-neighbour sampling. The matrix
    maps source (x, y) to destination (x, y); 2x3 or 3x3 accepted.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape == (2, 3):
        m = np.vstack([m, [0.0, 0.0, 1.0]])
    if m.shape != (3, 3):
        raise BundleError(f"affine matrix must be 2x3 or 3x3, got {m.shape}")
    det = np.linalg.det(m[:2, :2])
    if abs(det) < 1e-12:
        raise BundleError("affine transform is not invertible")
    inv = np.linalg.inv(m)

    h, w = bundle.height, bundle.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    src_x = inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]
    src_y = inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]
    coords = np.stack([src_y, src_x])  # map_coordinates wants (row, col)

    warped = np.stack(
        [
            ndimage.map_coordinates(bundle.image.data[:, :, ch], coords, order=1,
                                    mode="constant", cval=0.0)
            for ch in range(3)
        ],
        axis=2,
    )
    labels = ndimage.map_coordinates(bundle.parsing.labels, coords, order=0,
                                     mode="constant", cval=BACKGROUND)
    points = apply_affine_points(m, bundle.landmarks.points)

    return FaceBundle(
        image=Image(np.clip(warped, 0.0, 1.0), bundle.image.colorspace),
        landmarks=LandmarkSet(points),
        parsing=ParsingMap(labels),
    )
