"""Interlayer concept activation vector testing.

Edges between concepts of adjacent layers are scored by training a linear
classifier (CAV) for the earlier concept against random images, measuring
how often stepping along the CAV moves later-concept segments closer to
their centroid, and testing the run scores against chance with a
two-sided one-sample t-test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .concepts import Concept, gap
from .errors import (InsufficientRandomsError, InvalidInputError,
                     ZeroMarginError)
from .oracle import as_oracle

CAV_STEPS = 500
CAV_LR = 0.1
CAV_L2 = 1e-3
DEFAULT_RUNS = 20
DEFAULT_ALPHA = 0.05
CLASS_TOKEN = "class"


@dataclass
class CAV:
    layer: int
    direction: np.ndarray          # unit norm, length C*H*W of the layer
    accuracy: float

    def __post_init__(self):
        norm = float(np.linalg.norm(self.direction))
        if abs(norm - 1.0) > 1e-6:
            raise InvalidInputError(f"CAV direction norm {norm} is not 1")


@dataclass
class EdgeStat:
    src: str
    dst: str                       # concept id or CLASS_TOKEN
    weight: float
    p_value: float
    run_scores: list[float]

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0 or not 0.0 <= self.p_value <= 1.0:
            raise InvalidInputError("weight and p-value must lie in [0, 1]")
        if abs(self.weight - float(np.mean(self.run_scores))) > 1e-9:
            raise InvalidInputError("weight must equal the mean run score")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def train_cav(pos: np.ndarray, neg: np.ndarray, seed: int = 0, layer: int = 0) -> CAV:
    """Logistic regression separating concept activations from random ones.

    Full-batch gradient descent from zero init: 500 steps, rate 0.1,
    l2 penalty 1e-3 on the weights. The returned direction is the unit
    normal of the hyperplane, oriented toward the concept side.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.ndim != 2 or neg.ndim != 2 or pos.shape[1] != neg.shape[1]:
        raise InvalidInputError("pos and neg must be 2-D with equal feature dims")
    if len(pos) < 2 or len(neg) < 2:
        raise InvalidInputError("need at least 2 examples per side")
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    n = len(x)
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(CAV_STEPS):
        p = _sigmoid(x @ w + b)
        residual = p - y
        w -= CAV_LR * (x.T @ residual / n + CAV_L2 * w)
        b -= CAV_LR * float(residual.mean())
    norm = float(np.linalg.norm(w))
    if norm < 1e-12:
        raise ZeroMarginError("positive and negative sets are inseparable (zero margin)")
    pred = (x @ w + b) > 0
    return CAV(layer=layer, direction=w / norm, accuracy=float(np.mean(pred == (y == 1))))


def sensitivity(model, x: np.ndarray, j: int, l: int, centroid: np.ndarray,
                cav: CAV, literal_sign: bool = False) -> float:
    """Directional derivative of the layer-l centroid distance along the CAV.

    Positive exactly when a step along the CAV at layer j moves the pooled
    layer-l feature of x closer to the centroid. `literal_sign` drops the
    negation for comparison with the unnegated formula.
    """
    if j >= l:
        raise InvalidInputError(f"source layer {j} must precede target layer {l}")
    oracle = as_oracle(model)
    z_j = oracle.forward_to(x, j)
    grad = oracle.distance_grad(z_j, j, l, centroid)
    s = float(grad.ravel() @ cav.direction)
    return s if literal_sign else -s


def _positive_fraction(values: np.ndarray) -> float:
    return float(np.mean(values > 0.0))


def itcav_score(model, src: Concept, dst: Concept, segments_by_id: dict,
                random_negatives: np.ndarray, seed: int,
                literal_sign: bool = False) -> float:
    """Fraction of dst members pushed toward their centroid along src's CAV."""
    if not dst.members:
        raise InvalidInputError("destination concept has no members")
    oracle = as_oracle(model)
    pos = np.stack([oracle.forward_to(segments_by_id[m].rgb, src.layer).ravel()
                    for m in src.members])
    cav = train_cav(pos, random_negatives, seed=seed, layer=src.layer)
    scores = np.array([
        sensitivity(model, segments_by_id[m].rgb, src.layer, dst.layer,
                    dst.centroid, cav, literal_sign)
        for m in dst.members])
    return _positive_fraction(scores)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def ttest_two_sided(samples, mu0: float) -> float:
    """p-value of a one-sample two-sided Student t-test against mu0.

    Zero-variance samples get p = 1 when the mean equals mu0 and p = 0
    otherwise (the test is degenerate but the direction is unambiguous).
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if n < 2:
        raise InvalidInputError("need at least 2 samples")
    mean = float(samples.mean())
    sd = float(samples.std(ddof=1))
    if sd == 0.0:
        return 1.0 if mean == mu0 else 0.0
    t = (mean - mu0) / (sd / math.sqrt(n))
    df = n - 1
    return _betainc(df / 2.0, 0.5, df / (df + t * t))


def ttest_welch_two_sided(a, b) -> float:
    """p-value of a two-sample two-sided Welch t-test."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise InvalidInputError("need at least 2 samples per side")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va + vb == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    return _betainc(df / 2.0, 0.5, df / (df + t * t))


def _disjoint_negative_sets(model, random_pool: list[np.ndarray], runs: int,
                            layer: int, seed: int) -> list[np.ndarray]:
    per_run = len(random_pool) // runs
    if per_run < 2:
        raise InsufficientRandomsError(
            f"pool of {len(random_pool)} cannot supply {runs} disjoint sets of >= 2")
    oracle = as_oracle(model)
    rng = np.random.default_rng([seed, 0x4E47])
    order = rng.permutation(len(random_pool))
    sets = []
    for r in range(runs):
        chosen = order[r * per_run:(r + 1) * per_run]
        sets.append(np.stack([oracle.forward_to(random_pool[i], layer).ravel()
                              for i in chosen]))
    return sets


def _edge_from_scores(src_id: str, dst_id: str, scores: list[float],
                      alpha: float) -> EdgeStat | None:
    p = ttest_two_sided(scores, 0.5)
    if p > alpha:
        return None
    return EdgeStat(src=src_id, dst=dst_id, weight=float(np.mean(scores)),
                    p_value=p, run_scores=[float(s) for s in scores])


def itcav_edge(model, src: Concept, dst: Concept, segments_by_id: dict,
               random_pool: list[np.ndarray], runs: int = DEFAULT_RUNS,
               alpha: float = DEFAULT_ALPHA, seed: int = 0,
               literal_sign: bool = False,
               cavs: list[CAV] | None = None,
               dst_grads: np.ndarray | None = None) -> EdgeStat | None:
    """Significance-tested edge src -> dst, or None when not significant.

    `cavs` (one per run) and `dst_grads` (per-member distance gradients at
    the source layer, flattened) may be precomputed by the graph builder
    and shared across edges; they are recomputed here when absent.
    """
    if not dst.members:
        raise InvalidInputError("destination concept has no members")
    oracle = as_oracle(model)
    if cavs is None:
        neg_sets = _disjoint_negative_sets(model, random_pool, runs, src.layer, seed)
        pos = np.stack([oracle.forward_to(segments_by_id[m].rgb, src.layer).ravel()
                        for m in src.members])
        cavs = [train_cav(pos, neg, seed=seed + r, layer=src.layer)
                for r, neg in enumerate(neg_sets)]
    if len(cavs) != runs:
        raise InvalidInputError(f"expected {runs} CAVs, got {len(cavs)}")
    if dst_grads is None:
        dst_grads = np.stack([
            oracle.distance_grad(oracle.forward_to(segments_by_id[m].rgb, src.layer),
                                 src.layer, dst.layer, dst.centroid).ravel()
            for m in dst.members])
    sign = 1.0 if literal_sign else -1.0
    scores = [_positive_fraction(sign * (dst_grads @ cav.direction)) for cav in cavs]
    return _edge_from_scores(src.concept_id, dst.concept_id, scores, alpha)


def random_null_scores(model, dst: Concept, segments_by_id: dict,
                       random_pool: list[np.ndarray], src_layer: int,
                       runs: int = DEFAULT_RUNS, seed: int = 0,
                       literal_sign: bool = False,
                       dst_grads: np.ndarray | None = None) -> list[float]:
    """Null score distribution from CAVs with random positives.

    Alternative significance protocol: each run trains a CAV whose positive
    set is itself random (disjoint from the negatives), yielding the score
    distribution expected of a meaningless source concept. Observed run
    scores are then compared against these with a Welch t-test.
    """
    oracle = as_oracle(model)
    sets = _disjoint_negative_sets(model, random_pool, 2 * runs, src_layer,
                                   seed=seed + 0x52)
    if dst_grads is None:
        dst_grads = np.stack([
            oracle.distance_grad(oracle.forward_to(segments_by_id[m].rgb, src_layer),
                                 src_layer, dst.layer, dst.centroid).ravel()
            for m in dst.members])
    sign = 1.0 if literal_sign else -1.0
    scores = []
    for r in range(runs):
        cav = train_cav(sets[2 * r], sets[2 * r + 1], seed=seed + r, layer=src_layer)
        scores.append(_positive_fraction(sign * (dst_grads @ cav.direction)))
    return scores


def tcav_class_edge(model, concept: Concept, class_index: int,
                    class_images: list[np.ndarray], random_pool: list[np.ndarray],
                    segments_by_id: dict, runs: int = DEFAULT_RUNS,
                    alpha: float = DEFAULT_ALPHA, seed: int = 0,
                    cavs: list[CAV] | None = None) -> EdgeStat | None:
    """Edge from a deepest-layer concept to the class logit (standard TCAV)."""
    if not class_images:
        raise InvalidInputError("need at least one class image")
    oracle = as_oracle(model)
    if cavs is None:
        neg_sets = _disjoint_negative_sets(model, random_pool, runs, concept.layer, seed)
        pos = np.stack([oracle.forward_to(segments_by_id[m].rgb, concept.layer).ravel()
                        for m in concept.members])
        cavs = [train_cav(pos, neg, seed=seed + r, layer=concept.layer)
                for r, neg in enumerate(neg_sets)]
    grads = np.stack([
        oracle.logit_grad(oracle.forward_to(img, concept.layer),
                          concept.layer, class_index).ravel()
        for img in class_images])
    scores = [_positive_fraction(grads @ cav.direction) for cav in cavs]
    return _edge_from_scores(concept.concept_id, CLASS_TOKEN, scores, alpha)
