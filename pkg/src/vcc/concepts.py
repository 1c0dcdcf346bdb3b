"""Layer-wise concept discovery.

Masked segments are re-embedded through the model at their own layer,
globally average pooled, over-clustered with k-means across the dataset,
and pruned with a generalized logistic threshold on member counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cluster import kmeans  # noqa: F401  (re-exported: clustering lives here conceptually)
from .errors import InvalidInputError
from .oracle import as_oracle
from .segment import SegmentRecord, SegmentSet, bilinear_resize

DEFAULT_K = 25


@dataclass
class PruningConfig:
    """Generalized logistic sigmoid constants for the member-count threshold."""

    A: float = -102.0
    K: float = 115.0
    C: float = 1.0
    Q: float = 1.0
    B: float = 0.0004
    nu: float = 1.0

    def __post_init__(self):
        if self.K <= self.A or self.B <= 0 or self.nu <= 0:
            raise InvalidInputError("pruning constants must satisfy K > A, B > 0, nu > 0")


@dataclass
class Concept:
    layer: int
    centroid: np.ndarray           # GAP feature space of the layer
    members: list[str]             # segment ids
    concept_id: str

    def __post_init__(self):
        if not self.members:
            raise InvalidInputError("a concept needs at least one member")


@dataclass
class ConceptLayer:
    layer: int
    concepts: list[Concept] = field(default_factory=list)
    segment_count: int = 0         # t: all segments seen at this layer

    @property
    def concept_count(self) -> int:
        return len(self.concepts)


def gap(activation: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean of a C,H,W tensor."""
    activation = np.asarray(activation, dtype=np.float64)
    if activation.ndim != 3:
        raise InvalidInputError(f"expected C,H,W, got shape {activation.shape}")
    return activation.mean(axis=(1, 2))


def embed_segments(model, segments: list[SegmentRecord], layer: int) -> np.ndarray:
    """Masked RGB segments -> pooled feature vectors at their own layer.

    Segments are bilinearly resized to the model input resolution with
    zeros preserved off-mask, so no context leaks into the embedding.
    """
    oracle = as_oracle(model)
    h, w = oracle.input_shape[1], oracle.input_shape[2]
    vectors = []
    for seg in segments:
        rgb = seg.rgb
        if rgb.shape[1:] != (h, w):
            rgb = bilinear_resize(rgb, (h, w))
        vectors.append(gap(oracle.forward_to(rgb, layer)))
    return np.stack(vectors)


def pruning_threshold(t: float, cfg: PruningConfig | None = None) -> float:
    """Minimum member count Y as a function of the layer's segment count t."""
    cfg = cfg or PruningConfig()
    if t < 0:
        raise InvalidInputError("segment count must be >= 0")
    return cfg.A + (cfg.K - cfg.A) / (cfg.C + cfg.Q * math.exp(-cfg.B * t)) ** (1.0 / cfg.nu)


def discover_concepts(model, segment_set: SegmentSet, seed: int,
                      k_max: int = DEFAULT_K,
                      cfg: PruningConfig | None = None) -> list[ConceptLayer]:
    """Per tap layer: embed, over-cluster with k = min(k_max, n), prune.

    A layer where every cluster is pruned yields an empty ConceptLayer;
    downstream edge computation skips it.
    """
    cfg = cfg or PruningConfig()
    layers = []
    for layer in sorted(segment_set.by_layer):
        segments = segment_set.segments(layer)
        out = ConceptLayer(layer=layer, segment_count=len(segments))
        if not segments:
            layers.append(out)
            continue
        vectors = embed_segments(model, segments, layer)
        k = min(k_max, len(segments))
        centroids, assign = kmeans(vectors, k, seed=(seed * 31 + layer) % (2 ** 31))
        min_members = math.ceil(pruning_threshold(len(segments), cfg))
        idx = 0
        for label in range(k):
            member_ids = [segments[i].segment_id for i in np.nonzero(assign == label)[0]]
            if len(member_ids) < min_members or not member_ids:
                continue
            out.concepts.append(Concept(
                layer=layer, centroid=centroids[label],
                members=sorted(member_ids),
                concept_id=f"L{layer:02d}_c{idx:02d}"))
            idx += 1
        layers.append(out)
    return layers
