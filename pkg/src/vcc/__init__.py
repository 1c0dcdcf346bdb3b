"""Visual concept connectomes for layered differentiable image classifiers."""

from .errors import (BridgeError, InsufficientDataError, InsufficientRandomsError,
                     InvalidConceptError, InvalidInputError, LayerIndexError,
                     NoPathError, TrainingFailure, UndefinedMetricError,
                     UnsupportedLayerError, VCCError, ZeroMarginError)
from .netcore import LayeredModel
from .concepts import Concept, ConceptLayer, PruningConfig, discover_concepts
from .graph import (BuildConfig, SuppressionConfig, VCCGraph, aps,
                    aps_ls_correlation, build_vcc, layer_metrics, ls,
                    nearest_concept_diff, suppress_concept, suppression_curve)
from .itcav import CAV, EdgeStat, itcav_edge, itcav_score, sensitivity, train_cav
from .segment import SegmentSet, topdown_segment

__all__ = [
    "BridgeError", "BuildConfig", "CAV", "Concept", "ConceptLayer", "EdgeStat",
    "InsufficientDataError", "InsufficientRandomsError", "InvalidConceptError",
    "InvalidInputError", "LayerIndexError", "LayeredModel", "NoPathError",
    "PruningConfig", "SegmentSet", "SuppressionConfig", "TrainingFailure",
    "UndefinedMetricError", "UnsupportedLayerError", "VCCError", "VCCGraph",
    "ZeroMarginError", "aps", "aps_ls_correlation", "build_vcc",
    "discover_concepts", "itcav_edge", "itcav_score", "layer_metrics", "ls",
    "nearest_concept_diff", "sensitivity", "suppress_concept",
    "suppression_curve", "topdown_segment", "train_cav",
]

__version__ = "1.0.0"
