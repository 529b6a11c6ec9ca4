"""sklearn-style estimator around the transfer engine.

The algorithm is naturally fit/transform shaped: fitting distills the
reference makeup (the expensive, source-independent half), transforming
applies it to any number of source faces. That split is what makes
interactive shade sliders and per-frame video processing cheap, and the
BaseEstimator plumbing (get_params / set_params / clone) lets the engine's
knobs ride along in ordinary sklearn tooling.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .amm import MODE_PER_CHANNEL
from .engine import (
    DEFAULT_EYE_RING,
    DEFAULT_W,
    DEFAULT_WINDOW_RADIUS,
    TransferRequest,
    TransferResult,
    prepare_reference,
    transfer,
)
from .facedata import FaceBundle, WorkingGrid


def _as_bundle_list(x) -> list[FaceBundle]:
    if isinstance(x, FaceBundle):
        return [x]
    bundles = list(x)
    if not all(isinstance(b, FaceBundle) for b in bundles):
        raise TypeError("expected a FaceBundle or an iterable of FaceBundles")
    return bundles


class MakeupTransfer(BaseEstimator):
    """Makeup transfer as a fit/transform estimator.

    fit() takes one or two reference bundles and distills their makeup
    fields; transform() takes source bundles and returns one TransferResult
    per source. All parameters mirror the engine's TransferRequest.

    Parameters
    ----------
    grid_size : working grid edge (power of two in [16, 256])
    w : visual-feature weight in the attention similarity
    alpha : shade coefficient in [0, 1]; with one reference, 1.0 is the full
        reference makeup and 0.0 the source's own; with two references it
        interpolates between them
    regions : optional per-reference region selections, e.g.
        [["lip"], ["skin", "eyes"]]; selections of two references must be
        disjoint
    mode : "per-channel" or "broadcast" makeup fields
    window_radius : distillation window radius in working pixels
    eye_ring : skin ring (working pixels) annexed by an "eyes" selection
    """

    def __init__(
        self,
        grid_size: int = 64,
        w: float = DEFAULT_W,
        alpha: float = 1.0,
        regions=None,
        mode: str = MODE_PER_CHANNEL,
        window_radius: int = DEFAULT_WINDOW_RADIUS,
        eye_ring: int = DEFAULT_EYE_RING,
    ):
        self.grid_size = grid_size
        self.w = w
        self.alpha = alpha
        self.regions = regions
        self.mode = mode
        self.window_radius = window_radius
        self.eye_ring = eye_ring

    def fit(self, X, y=None) -> "MakeupTransfer":
        """Distill the reference bundle(s) in X; y is ignored."""
        references = _as_bundle_list(X)
        if not 1 <= len(references) <= 2:
            raise ValueError(f"need 1 or 2 reference bundles, got {len(references)}")
        grid = WorkingGrid(self.grid_size, self.grid_size)
        self.references_ = tuple(references)
        self.grid_ = grid
        self.prepared_ = tuple(
            prepare_reference(ref, grid, window=self.window_radius, mode=self.mode)
            for ref in references
        )
        return self

    def _request(self, source: FaceBundle) -> TransferRequest:
        regions = self.regions
        if regions is not None:
            regions = tuple(
                frozenset(sel) if sel is not None else None for sel in regions
            )
        return TransferRequest(
            source=source,
            references=self.references_,
            alpha=self.alpha,
            regions=regions,
            mode=self.mode,
            grid=self.grid_,
            w=self.w,
            window_radius=self.window_radius,
            eye_ring=self.eye_ring,
        )

    def transform(self, X) -> list[TransferResult]:
        """Apply the fitted makeup to each source bundle in X."""
        if not hasattr(self, "prepared_"):
            raise NotFittedError(
                "this MakeupTransfer instance is not fitted yet; call fit() "
                "with reference bundle(s) first"
            )
        return [transfer(self._request(src), prepared=self.prepared_) for src in _as_bundle_list(X)]

    def transform_one(self, source: FaceBundle) -> TransferResult:
        return self.transform([source])[0]
