"""Visual concept connectome assembly and analytics.

`build_vcc` runs the three pipeline stages (top-down segmentation, concept
discovery, interlayer edge testing) into a layered DAG; the rest of the
module computes graph metrics, the APS/LS validation pair, concept
suppression curves, and nearest-concept failure diffs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import concepts as concepts_mod
from . import formats, itcav, netcore, segment
from .concepts import Concept, ConceptLayer
from .errors import (InsufficientDataError, InvalidConceptError,
                     InvalidInputError, NoPathError, UndefinedMetricError)
from .itcav import CLASS_TOKEN, EdgeStat
from .oracle import as_oracle

DEFAULT_IMAGE_COUNT = 50


@dataclass
class BuildConfig:
    runs: int = itcav.DEFAULT_RUNS
    alpha: float = itcav.DEFAULT_ALPHA
    compactness: float = segment.DEFAULT_COMPACTNESS
    k_max: int = concepts_mod.DEFAULT_K
    literal_sign: bool = False
    null_protocol: str = "mu0"        # or "random-cav"

    def __post_init__(self):
        if self.runs < 2 or not 0 < self.alpha < 1:
            raise InvalidInputError("need runs >= 2 and alpha in (0, 1)")
        if self.null_protocol not in ("mu0", "random-cav"):
            raise InvalidInputError(f"unknown null protocol {self.null_protocol!r}")

    def to_dict(self) -> dict:
        return {"runs": self.runs, "alpha": self.alpha,
                "compactness": self.compactness, "k_max": self.k_max,
                "literal_sign": self.literal_sign,
                "null_protocol": self.null_protocol}

    @classmethod
    def from_dict(cls, data: dict) -> "BuildConfig":
        return cls(**data)


@dataclass
class SuppressionConfig:
    epsilons: list[float]
    layers: list[int]
    directions: dict[int, np.ndarray] | None = None   # None -> random per layer
    seed: int = 0

    def __post_init__(self):
        eps = list(self.epsilons)
        if any(e < 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
            raise InvalidInputError("epsilons must be nonnegative and strictly increasing")


@dataclass
class VCCGraph:
    tap_layers: list[int]
    layers: list[ConceptLayer]
    class_label: int
    edges: list[EdgeStat]             # between consecutive tap layers
    class_edges: list[EdgeStat]       # deepest tap layer -> class node
    model_hash: str = ""
    seed: int = 0
    config: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        layer_of = {c.concept_id: ly.layer for ly in self.layers for c in ly.concepts}
        position = {layer: i for i, layer in enumerate(self.tap_layers)}
        alpha = self.config.get("alpha", itcav.DEFAULT_ALPHA)
        for e in self.edges:
            if e.src not in layer_of or e.dst not in layer_of:
                raise InvalidInputError(f"edge {e.src}->{e.dst} references unknown concepts")
            if position[layer_of[e.dst]] != position[layer_of[e.src]] + 1:
                raise InvalidInputError(f"edge {e.src}->{e.dst} skips a tap layer")
        for e in self.class_edges:
            if e.dst != CLASS_TOKEN or layer_of.get(e.src) != self.tap_layers[-1]:
                raise InvalidInputError(f"class edge {e.src}->{e.dst} is malformed")
        for e in self.edges + self.class_edges:
            if e.p_value > alpha:
                raise InvalidInputError(f"retained edge {e.src}->{e.dst} has p > alpha")

    def concept(self, concept_id: str) -> Concept:
        for ly in self.layers:
            for c in ly.concepts:
                if c.concept_id == concept_id:
                    return c
        raise InvalidConceptError(f"no concept {concept_id!r} in the graph")

    def all_concepts(self):
        for ly in self.layers:
            yield from ly.concepts

    def to_dict(self) -> dict:
        return {
            "format": "vcc-graph/1",
            "model_hash": self.model_hash,
            "class": self.class_label,
            "seed": self.seed,
            "config": self.config,
            "tap_layers": list(self.tap_layers),
            "layers": [{
                "index": ly.layer,
                "segment_count": ly.segment_count,
                "concepts": [{
                    "id": c.concept_id,
                    "centroid": [float(v) for v in c.centroid],
                    "members": list(c.members),
                } for c in ly.concepts],
            } for ly in self.layers],
            "edges": [_edge_dict(e) for e in self.edges],
            "class_edges": [_edge_dict(e) for e in self.class_edges],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VCCGraph":
        if data.get("format") != "vcc-graph/1":
            raise InvalidInputError(f"unknown graph format {data.get('format')!r}")
        layers = []
        for entry in data["layers"]:
            ly = ConceptLayer(layer=entry["index"], segment_count=entry["segment_count"])
            for c in entry["concepts"]:
                ly.concepts.append(Concept(
                    layer=entry["index"], centroid=np.array(c["centroid"]),
                    members=list(c["members"]), concept_id=c["id"]))
            layers.append(ly)
        return cls(
            tap_layers=list(data["tap_layers"]), layers=layers,
            class_label=data["class"],
            edges=[_edge_from_dict(e) for e in data["edges"]],
            class_edges=[_edge_from_dict(e) for e in data["class_edges"]],
            model_hash=data["model_hash"], seed=data["seed"],
            config=data["config"], warnings=list(data.get("warnings", [])))


def _edge_dict(e: EdgeStat) -> dict:
    return {"src": e.src, "dst": e.dst, "weight": e.weight,
            "p_value": e.p_value, "runs": list(e.run_scores)}


def _edge_from_dict(d: dict) -> EdgeStat:
    return EdgeStat(src=d["src"], dst=d["dst"], weight=d["weight"],
                    p_value=d["p_value"], run_scores=list(d["runs"]))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build_vcc(model, images: list[np.ndarray], random_pool: list[np.ndarray],
              class_label: int, tap_layers=None, config: BuildConfig | None = None,
              seed: int = 0) -> VCCGraph:
    """Segment, discover concepts, and test every adjacent-layer edge.

    Layers whose concepts are all pruned away are kept (empty) in the graph
    but skipped for edges, with a warning recorded.
    """
    oracle = as_oracle(model)
    config = config or BuildConfig()
    if tap_layers is None:
        tap_layers = list(oracle.tap_layers)
    tap_layers = sorted(tap_layers)

    seg = segment.topdown_segment(model, images, tap_layers, seed=seed,
                                  compactness=config.compactness)
    layers = concepts_mod.discover_concepts(model, seg, seed=seed, k_max=config.k_max)
    segments_by_id = {s.segment_id: s for s in seg.all_segments()}
    warnings = []

    # per-run CAVs depend only on the source concept; cache and reuse
    # across all destination concepts of the next layer
    def cavs_for(concept: Concept, neg_sets) -> list[itcav.CAV]:
        pos = np.stack([oracle.forward_to(segments_by_id[m].rgb, concept.layer).ravel()
                        for m in concept.members])
        return [itcav.train_cav(pos, neg, seed=seed + r, layer=concept.layer)
                for r, neg in enumerate(neg_sets)]

    edges: list[EdgeStat] = []
    for src_layer, dst_layer in zip(layers, layers[1:]):
        if not src_layer.concepts or not dst_layer.concepts:
            warnings.append(
                f"no concepts at layer {src_layer.layer if not src_layer.concepts else dst_layer.layer}; "
                f"edges {src_layer.layer}->{dst_layer.layer} skipped")
            continue
        neg_sets = itcav._disjoint_negative_sets(
            model, random_pool, config.runs, src_layer.layer, seed=seed + src_layer.layer)
        cav_cache = {c.concept_id: cavs_for(c, neg_sets) for c in src_layer.concepts}
        for dst in dst_layer.concepts:
            # distance gradients depend only on (member, src layer, centroid)
            dst_grads = np.stack([
                oracle.distance_grad(
                    oracle.forward_to(segments_by_id[m].rgb, src_layer.layer),
                    src_layer.layer, dst.layer, dst.centroid).ravel()
                for m in dst.members])
            null = None
            if config.null_protocol == "random-cav":
                null = itcav.random_null_scores(
                    model, dst, segments_by_id, random_pool, src_layer.layer,
                    runs=config.runs, seed=seed + src_layer.layer,
                    literal_sign=config.literal_sign, dst_grads=dst_grads)
            for src in src_layer.concepts:
                edge = itcav.itcav_edge(
                    model, src, dst, segments_by_id, random_pool,
                    runs=config.runs, alpha=config.alpha, seed=seed,
                    literal_sign=config.literal_sign,
                    cavs=cav_cache[src.concept_id], dst_grads=dst_grads)
                if null is not None:
                    scores = edge.run_scores if edge is not None else None
                    if scores is None:
                        continue
                    p = itcav.ttest_welch_two_sided(scores, null)
                    edge = None if p > config.alpha else EdgeStat(
                        src=src.concept_id, dst=dst.concept_id,
                        weight=float(np.mean(scores)), p_value=p, run_scores=scores)
                if edge is not None:
                    edges.append(edge)

    class_edges: list[EdgeStat] = []
    deepest = layers[-1]
    if deepest.concepts:
        neg_sets = itcav._disjoint_negative_sets(
            model, random_pool, config.runs, deepest.layer, seed=seed + deepest.layer)
        for c in deepest.concepts:
            edge = itcav.tcav_class_edge(
                model, c, class_label, images, random_pool, segments_by_id,
                runs=config.runs, alpha=config.alpha, seed=seed,
                cavs=cavs_for(c, neg_sets))
            if edge is not None:
                class_edges.append(edge)
    else:
        warnings.append(f"no concepts at deepest layer {deepest.layer}; class edges skipped")

    model_hash = ""
    if isinstance(model, netcore.LayeredModel):
        model_hash = formats.model_hash(model)
    elif hasattr(model, "model_hash"):
        model_hash = model.model_hash()
    return VCCGraph(tap_layers=tap_layers, layers=layers, class_label=class_label,
                    edges=edges, class_edges=class_edges, model_hash=model_hash,
                    seed=seed, config=config.to_dict(), warnings=warnings)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def layer_metrics(graph: VCCGraph) -> dict[int, dict]:
    """Per tap layer: branching factor, concept count, edge weight mean/variance.

    Outgoing edges of the deepest layer are its class edges. Layers without
    concepts get None entries.
    """
    out: dict[int, dict] = {}
    for i, ly in enumerate(graph.layers):
        if not ly.concepts:
            out[ly.layer] = {"branching_factor": None, "concept_count": 0,
                             "edge_weight_mean": None, "edge_weight_variance": None}
            continue
        if i + 1 < len(graph.layers):
            ids = {c.concept_id for c in ly.concepts}
            outgoing = [e for e in graph.edges if e.src in ids]
        else:
            outgoing = list(graph.class_edges)
        weights = [e.weight for e in outgoing]
        out[ly.layer] = {
            "branching_factor": len(outgoing) / len(ly.concepts),
            "concept_count": len(ly.concepts),
            "edge_weight_mean": float(np.mean(weights)) if weights else None,
            "edge_weight_variance": float(np.var(weights)) if weights else None,
        }
    return out


def _adjacency(graph: VCCGraph) -> dict[str, list[EdgeStat]]:
    adj: dict[str, list[EdgeStat]] = {}
    for e in graph.edges + graph.class_edges:
        adj.setdefault(e.src, []).append(e)
    return adj


def enumerate_paths(graph: VCCGraph, concept_id: str) -> list[list[EdgeStat]]:
    """All edge sequences from the concept to the class node."""
    graph.concept(concept_id)
    adj = _adjacency(graph)
    paths: list[list[EdgeStat]] = []

    def walk(node: str, trail: list[EdgeStat]):
        if node == CLASS_TOKEN:
            paths.append(list(trail))
            return
        for e in adj.get(node, []):
            trail.append(e)
            walk(e.dst, trail)
            trail.pop()

    walk(concept_id, [])
    return paths


def path_count(graph: VCCGraph, concept_id: str) -> int:
    """Dynamic-programming path count; cross-checks the enumerator."""
    adj = _adjacency(graph)
    memo: dict[str, int] = {CLASS_TOKEN: 1}

    def count(node: str) -> int:
        if node not in memo:
            memo[node] = sum(count(e.dst) for e in adj.get(node, []))
        return memo[node]

    return count(concept_id)


def aps(graph: VCCGraph, concept_id: str) -> float:
    """Average path score: mean over concept->class paths of the mean edge weight."""
    paths = enumerate_paths(graph, concept_id)
    if not paths:
        raise NoPathError(f"no path from {concept_id!r} to the class node")
    return float(np.mean([np.mean([e.weight for e in p]) for p in paths]))


def ls(model, concept: Concept, segments_by_id: dict, class_index: int) -> float:
    """Logit score: summed class logits of the members' masked images."""
    if not concept.members:
        raise InvalidInputError("concept has no members")
    oracle = as_oracle(model)
    h, w = oracle.input_shape[1], oracle.input_shape[2]
    total = 0.0
    for m in concept.members:
        rgb = segments_by_id[m].rgb
        if rgb.shape[1:] != (h, w):
            rgb = segment.bilinear_resize(rgb, (h, w))
        total += float(oracle.forward_full(rgb)[class_index])
    return total


def aps_ls_correlation(graph: VCCGraph, model, segments_by_id: dict,
                       class_index: int | None = None) -> float:
    """Pearson r between APS and LS over all concepts with a path to the class."""
    if class_index is None:
        class_index = graph.class_label
    pairs = []
    for c in graph.all_concepts():
        try:
            a = aps(graph, c.concept_id)
        except NoPathError:
            continue
        pairs.append((a, ls(model, c, segments_by_id, class_index)))
    if len(pairs) < 3:
        raise InsufficientDataError(f"only {len(pairs)} concepts have paths; need >= 3")
    xs = np.array([p[0] for p in pairs])
    ys = np.array([p[1] for p in pairs])
    if xs.std() == 0 or ys.std() == 0:
        raise UndefinedMetricError("zero variance in APS or LS; correlation undefined")
    return float(np.corrcoef(xs, ys)[0, 1])


# ---------------------------------------------------------------------------
# concept suppression
# ---------------------------------------------------------------------------

def suppress_concept(activation: np.ndarray, centroid: np.ndarray, eps: float) -> np.ndarray:
    """z <- z - eps * q / ||q||, broadcast over the spatial positions."""
    activation = np.asarray(activation, dtype=np.float64)
    centroid = np.asarray(centroid, dtype=np.float64)
    if eps < 0:
        raise InvalidInputError("eps must be >= 0")
    norm = float(np.linalg.norm(centroid))
    if norm == 0.0:
        raise InvalidConceptError("cannot suppress along a zero centroid")
    if activation.ndim != 3 or activation.shape[0] != centroid.shape[0]:
        raise InvalidInputError(
            f"activation {activation.shape} does not match centroid dim {centroid.shape}")
    return activation - eps * (centroid / norm)[:, None, None]


def _forward_suppressed(model, image: np.ndarray, directions: dict[int, np.ndarray],
                        eps: float) -> np.ndarray:
    oracle = as_oracle(model)
    layers = sorted(directions)
    z = oracle.forward_to(image, layers[0])
    z = suppress_concept(z, directions[layers[0]], eps)
    for prev, nxt in zip(layers, layers[1:]):
        z = oracle.forward_between(z, prev, nxt)
        z = suppress_concept(z, directions[nxt], eps)
    last = len(model.layers) - 1 if isinstance(model, netcore.LayeredModel) else None
    if last is None:
        return oracle.forward_between(z, layers[-1], -1)
    return oracle.forward_between(z, layers[-1], last)


def random_directions(model, layers: list[int], seed: int) -> dict[int, np.ndarray]:
    """Unit random GAP-space vector per layer (suppression baseline).

    Sampled from the nonnegative orthant, where concept centroids live
    (GAP of post-relu activations), so the baseline is drawn from the same
    space as the concept directions it is compared against.
    """
    oracle = as_oracle(model)
    rng = np.random.default_rng([seed, 0xD12])
    out = {}
    for layer in layers:
        c = oracle.layer_output_shape(layer)[0]
        v = np.abs(rng.normal(size=c))
        out[layer] = v / np.linalg.norm(v)
    return out


def suppression_curve(model, eval_images: list[np.ndarray], labels: list[int],
                      config: SuppressionConfig) -> dict:
    """Accuracy as each tap layer's chosen direction is suppressed by eps.

    Returns the per-eps accuracies and the trapezoidal AUC over the eps
    grid normalized to [0, 1].
    """
    if not eval_images or len(eval_images) != len(labels):
        raise InvalidInputError("need matching eval images and labels")
    directions = config.directions
    if directions is None:
        directions = random_directions(model, config.layers, config.seed)
    if sorted(directions) != sorted(config.layers):
        raise InvalidInputError("directions must cover exactly the configured layers")
    labels_arr = np.asarray(labels)
    accuracies = []
    for eps in config.epsilons:
        preds = np.array([
            int(np.argmax(_forward_suppressed(model, img, directions, eps)))
            for img in eval_images])
        accuracies.append(float(np.mean(preds == labels_arr)))
    eps = np.asarray(config.epsilons, dtype=np.float64)
    if len(eps) > 1 and eps[-1] > eps[0]:
        x = (eps - eps[0]) / (eps[-1] - eps[0])
        auc = float(np.trapezoid(accuracies, x))
    else:
        auc = float(accuracies[0])
    return {"epsilons": [float(e) for e in config.epsilons],
            "accuracies": accuracies, "auc": auc}


# ---------------------------------------------------------------------------
# failure-mode diffing
# ---------------------------------------------------------------------------

def nearest_concept_diff(vcc_a: VCCGraph, vcc_b: VCCGraph, image: np.ndarray,
                         model, seed: int = 0) -> dict:
    """Assign each segment of one image to its nearest concept across two graphs.

    Segments are produced by the same top-down pipeline, embedded at their
    layer, and matched by l2 distance to the union of both graphs' centroids
    at that layer. Layers missing concepts in either graph are skipped.
    """
    if vcc_a.tap_layers != vcc_b.tap_layers:
        raise InvalidInputError("graphs were built on different tap layers")
    if vcc_a.model_hash and vcc_b.model_hash and vcc_a.model_hash != vcc_b.model_hash:
        raise InvalidInputError("graphs were built on different models")
    seg = segment.topdown_segment(model, [image], vcc_a.tap_layers, seed=seed)
    assignments: dict[str, dict] = {}
    tallies: dict[int, dict[str, int]] = {}
    warnings = []
    concepts_at = {
        la.layer: [("a", c) for c in la.concepts] + [("b", c) for c in lb.concepts]
        for la, lb in zip(vcc_a.layers, vcc_b.layers)}
    for layer in vcc_a.tap_layers:
        candidates = concepts_at.get(layer, [])
        if not candidates:
            warnings.append(f"layer {layer} has no concepts in either graph; skipped")
            continue
        records = seg.segments(layer)
        if not records:
            continue
        embeddings = concepts_mod.embed_segments(model, records, layer)
        tallies[layer] = {"a": 0, "b": 0}
        for rec, emb in zip(records, embeddings):
            best = min(candidates,
                       key=lambda gc: float(np.linalg.norm(emb - gc[1].centroid)))
            graph_tag, concept = best
            assignments[rec.segment_id] = {
                "graph": graph_tag, "concept": concept.concept_id,
                "distance": float(np.linalg.norm(emb - concept.centroid))}
            tallies[layer][graph_tag] += 1
    return {"assignments": assignments, "tallies": tallies, "warnings": warnings}
