"""Detect and localize UI display issues in mobile app screenshots.

The package covers the full pipeline: synthesizing labeled buggy
screenshots from clean UIs (augmentor), near-duplicate removal (dedup),
a from-scratch convolutional detector (nncore, owlnet), and gradient
based defect localization (gradcam). See the CLI in owleye.cli for the
batch entry points.
"""

from .augmentor import (AugmentationRecord, AugmentOptions, BugCategory,
                        NoCandidateError, UnsupportedCategoryError,
                        assign_categories, augment, derive_seed)
from .dedup import (ImageSignature, cosine_similarity, dedup_stream,
                    dedup_stream_detailed, hamming_distance, image_signature,
                    orb_features, signature_of_image)
from .gradcam import (LocalizationError, LocalizationMap, grad_cam,
                      localization_hit, map_to_region)
from .hierarchy import (HierarchyError, ViewNode, ViewTree, collect_views,
                        parse_hierarchy, sample_background_color,
                        serialize_hierarchy)
from .imaging import (BBox, Color, RasterImage, bilinear_resize, draw_text,
                      fill_rect, overlay_heatmap, paste, resize_normalize,
                      rotate_to_portrait, round_half_up)
from .manifest import ManifestError, app_id, read_manifest, write_manifest
from .owlnet import (CheckpointError, ConfigError, Detection, MetricsReport,
                     NetworkConfig, Network, NumericError, TrainConfig,
                     build_network, classify, evaluate, format_metric,
                     load_checkpoint, precision_recall_f1, save_checkpoint,
                     train)

__version__ = "0.1.0"

__all__ = [
    "AugmentationRecord", "AugmentOptions", "BugCategory", "NoCandidateError",
    "UnsupportedCategoryError", "assign_categories", "augment", "derive_seed",
    "ImageSignature", "cosine_similarity", "dedup_stream",
    "dedup_stream_detailed", "hamming_distance", "image_signature",
    "orb_features", "signature_of_image",
    "LocalizationError", "LocalizationMap", "grad_cam", "localization_hit",
    "map_to_region",
    "HierarchyError", "ViewNode", "ViewTree", "collect_views",
    "parse_hierarchy", "sample_background_color", "serialize_hierarchy",
    "BBox", "Color", "RasterImage", "bilinear_resize", "draw_text",
    "fill_rect", "overlay_heatmap", "paste", "resize_normalize",
    "rotate_to_portrait", "round_half_up",
    "ManifestError", "app_id", "read_manifest", "write_manifest",
    "CheckpointError", "ConfigError", "Detection", "MetricsReport",
    "NetworkConfig", "Network", "NumericError", "TrainConfig",
    "build_network", "classify", "evaluate", "format_metric",
    "load_checkpoint", "precision_recall_f1", "save_checkpoint", "train",
    "__version__",
]
