"""Underwater scene toolkit.

Physics-grounded image degradation/restoration, a depth-conditioned vision
feature enhancement block with hand-derived gradients, rule-based QA dataset
generation, and the matching evaluation stack (box metrics, caption metrics,
free-text parsers), all behind a single ``uwscene`` CLI.
"""

from .boxes import format_bbox, validate_bbox
from .errors import (DimensionError, MissingPredictionsError, NumericError,
                     ParseError, ProviderError, ValidationError)
from .imaging import (Attenuation, PatchGrid, SceneSpec, degrade, estimate_backscatter,
                      restore, select_dark_patch, synthesize_pair)
from .vfe import DepthFeature, VfeParams, enhance, enhance_from_parts, grad_check

__version__ = "0.1.0"

__all__ = [
    "Attenuation", "DepthFeature", "DimensionError", "MissingPredictionsError",
    "NumericError", "ParseError", "PatchGrid", "ProviderError", "SceneSpec",
    "ValidationError", "VfeParams", "degrade", "enhance", "enhance_from_parts",
    "estimate_backscatter", "format_bbox", "grad_check", "restore",
    "select_dark_patch", "synthesize_pair", "validate_bbox", "__version__",
]
