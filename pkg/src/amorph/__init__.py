"""amorph: landmark-anchored attentive makeup morphing.

Partial, shade-controllable, pose/expression-robust makeup transfer built
from per-pixel makeup statistics, relative-position attention, and region
masks. Ships as a library (sklearn-style estimator), a CLI, and an HTTP
service.
"""

from .amm import (
    GAMMA_MIN,
    AttentionMatrix,
    MakeupField,
    RelPosField,
    attention_row,
    attentive_matrix,
    attentive_matrix_dense,
    expand_field,
    morph_field,
    rel_pos_features,
)
from .engine import (
    TransferRequest,
    TransferResult,
    cycle_metric,
    distill,
    histogram_match,
    makeup_distance,
    normalize_source,
    prepare_reference,
    transfer,
)
from .estimator import MakeupTransfer
from .facedata import (
    BACKGROUND,
    EYES,
    LIP,
    SKIN,
    BundleError,
    FaceBundle,
    Image,
    LandmarkSet,
    ParsingMap,
    SynthParams,
    WorkingGrid,
    affine_matrix,
    downsample_bundle,
    load_bundle,
    load_bundle_dir,
    save_bundle_dir,
    synth_face,
    warp_bundle,
)

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND",
    "SKIN",
    "LIP",
    "EYES",
    "GAMMA_MIN",
    "AttentionMatrix",
    "BundleError",
    "FaceBundle",
    "Image",
    "LandmarkSet",
    "MakeupField",
    "MakeupTransfer",
    "ParsingMap",
    "RelPosField",
    "SynthParams",
    "TransferRequest",
    "TransferResult",
    "WorkingGrid",
    "affine_matrix",
    "attention_row",
    "attentive_matrix",
    "attentive_matrix_dense",
    "cycle_metric",
    "distill",
    "downsample_bundle",
    "expand_field",
    "histogram_match",
    "load_bundle",
    "load_bundle_dir",
    "makeup_distance",
    "morph_field",
    "normalize_source",
    "prepare_reference",
    "rel_pos_features",
    "save_bundle_dir",
    "synth_face",
    "transfer",
    "warp_bundle",
    "__version__",
]
