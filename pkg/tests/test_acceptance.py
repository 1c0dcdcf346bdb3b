"""Acceptance suite: one test per shipped guarantee, each printing a verdict line.

Every test measures its own runtime against the stated budget and checks the
stated numeric tolerance, so `pytest -v tests/test_acceptance.py` reads as a
pass/fail checklist of the package's headline claims.
"""

import itertools
import time
from importlib import resources

import numpy as np
import pytest
import scipy.stats

from vcc import checks, cluster, concepts, formats, graph, itcav, netcore, segment
from vcc.concepts import Concept
from vcc.graph import SuppressionConfig
from vcc.itcav import CAV, itcav_edge, ttest_two_sided

from test_cluster import brute_silhouette, exhaustive_best_inertia, inertia_of
from test_itcav import conv1x1_chain
from conftest import BUILD_SEED


def verdict(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'}: {name} ({detail})")
    assert ok, f"{name}: {detail}"


def spearman_rho(x, y):
    rx = np.argsort(np.argsort(x))
    ry = np.argsort(np.argsort(y))
    return float(np.corrcoef(rx, ry)[0, 1])


class TestAcceptance:
    def test_gradient_fidelity(self):
        start = time.perf_counter()
        err = checks.gradient_validation(trials=100, seed=0)
        elapsed = time.perf_counter() - start
        verdict("gradient fidelity", err < 1e-4 and elapsed < 60,
                f"max relative error {err:.3e} < 1e-4, {elapsed:.1f}s < 60s")

    def test_receptive_fields(self):
        start = time.perf_counter()
        path = str(resources.files("vcc") / "data" / "vgg16.json")
        model = formats.load_model(path)
        rfs = {t: netcore.receptive_field(model, t) for t in model.tap_layers}
        elapsed = time.perf_counter() - start
        want = {8: 10, 15: 32, 22: 80, 29: 176}
        verdict("receptive fields", rfs == want and elapsed < 1,
                f"taps {rfs} == {want}, {elapsed:.2f}s < 1s")

    def test_segment_size_trend(self, toy_model, toy_segments, toy_vcc):
        start = time.perf_counter()
        sizes, rfs = [], []
        for layer in toy_vcc.tap_layers:
            records = [s for s in toy_segments.values() if s.mask.layer == layer]
            sizes.append(segment.relative_segment_size(records))
            rfs.append(netcore.receptive_field(toy_model, layer))
        rho = spearman_rho(rfs, sizes)
        elapsed = time.perf_counter() - start
        verdict("segment-size trend", rho == 1.0 and elapsed < 300,
                f"sizes {np.round(sizes, 3).tolist()} vs RFs {rfs}, "
                f"spearman rho {rho} == 1, {elapsed:.1f}s < 5min")

    def test_concept_suppression(self, toy_model, toy_vcc, eval_dataset):
        start = time.perf_counter()
        images = [s.image for s in eval_dataset if s.label == toy_vcc.class_label]
        labels = [toy_vcc.class_label] * len(images)
        eps = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
        layers = list(toy_vcc.tap_layers)
        concept_aucs, random_aucs = [], []
        for seed in range(5):
            rng = np.random.default_rng([seed, 0x5C])
            directions = {
                ly.layer: ly.concepts[int(rng.integers(len(ly.concepts)))].centroid
                for ly in toy_vcc.layers}
            cfg = SuppressionConfig(epsilons=eps, layers=layers,
                                    directions=directions, seed=seed)
            concept_aucs.append(
                graph.suppression_curve(toy_model, images, labels, cfg)["auc"])
            cfg = SuppressionConfig(epsilons=eps, layers=layers, seed=seed)
            random_aucs.append(
                graph.suppression_curve(toy_model, images, labels, cfg)["auc"])
        c, r = float(np.mean(concept_aucs)), float(np.mean(random_aucs))
        elapsed = time.perf_counter() - start
        verdict("concept suppression", c <= 0.9 * r and elapsed < 300,
                f"concept AUC {c:.3f} <= 0.9 x random AUC {r:.3f} "
                f"over 5 seeds, {elapsed:.1f}s < 5min")

    def test_aps_ls_correlation(self, toy_model, toy_vcc, toy_segments,
                                class0_images, random_pool):
        start = time.perf_counter()
        rs, counts = [], []
        for seed in (BUILD_SEED, BUILD_SEED + 1, BUILD_SEED + 2):
            if seed == BUILD_SEED:
                vcc, segs = toy_vcc, toy_segments
            else:
                vcc = graph.build_vcc(toy_model, class0_images, random_pool,
                                      class_label=0, seed=seed)
                seg = segment.topdown_segment(toy_model, class0_images,
                                              vcc.tap_layers, seed=seed)
                segs = {s.segment_id: s for s in seg.all_segments()}
            reachable = 0
            for c in vcc.all_concepts():
                try:
                    graph.aps(vcc, c.concept_id)
                    reachable += 1
                except graph.NoPathError:
                    pass
            counts.append(reachable)
            rs.append(graph.aps_ls_correlation(vcc, toy_model, segs))
        mean_r = float(np.mean(rs))
        elapsed = time.perf_counter() - start
        ok = mean_r > 0.2 and all(n >= 20 for n in counts) and elapsed < 600
        verdict("aps-ls correlation", ok,
                f"pearson r {np.round(rs, 3).tolist()} mean {mean_r:.3f} > 0.2 "
                f"over {counts} concepts, {elapsed:.1f}s < 10min")

    def test_clustering_oracles(self):
        start = time.perf_counter()
        rng = np.random.default_rng(0)
        worst_gap = 0.0
        for trial in range(50):
            n = int(rng.integers(4, 9))
            k = int(rng.integers(2, min(3, n - 1) + 1))
            points = rng.normal(size=(n, 2))
            centroids, assign = cluster.kmeans(points, k, seed=trial)
            gap = inertia_of(points, centroids, assign) - \
                exhaustive_best_inertia(points, k)
            worst_gap = max(worst_gap, gap)
        blob_rng = np.random.default_rng(4)
        pts = np.vstack([blob_rng.normal(0, 0.1, (8, 2)),
                         blob_rng.normal(8, 0.1, (8, 2)),
                         blob_rng.normal((0, 8), 0.1, (8, 2))])
        chosen = segment.choose_k_silhouette(pts, range(2, 7), seed=0)
        scores = {}
        for k in range(2, 7):
            _, assign = cluster.kmeans(pts, k, seed=0)
            scores[k] = brute_silhouette(pts, assign)
        brute_best = max(scores, key=scores.get)
        elapsed = time.perf_counter() - start
        ok = worst_gap <= 1e-9 and chosen == brute_best == 3 and elapsed < 60
        verdict("clustering oracles", ok,
                f"kmeans-vs-exhaustive worst gap {worst_gap:.2e} over 50 "
                f"instances, silhouette k {chosen} == brute-force {brute_best}, "
                f"{elapsed:.1f}s < 60s")

    def test_pruning_function(self):
        start = time.perf_counter()
        y0 = concepts.pruning_threshold(0.0)
        y2500 = concepts.pruning_threshold(2500.0)
        want = -102.0 + 217.0 / (1.0 + np.exp(-1.0))
        elapsed = time.perf_counter() - start
        ok = abs(y0 - 6.5) < 1e-9 and abs(y2500 - want) < 1e-9 and elapsed < 1
        verdict("pruning function", ok,
                f"Y(0) = {y0} == 6.5, Y(2500) = {y2500:.12f} == {want:.12f} "
                f"to 1e-9, {elapsed:.2f}s < 1s")

    def test_itcav_analytic_cases(self):
        start = time.perf_counter()
        rng = np.random.default_rng(8)
        m2 = rng.normal(size=(4, 3))
        model = conv1x1_chain(np.eye(3), m2)
        members = []
        segments = {}
        for i in range(5):
            sid = f"seg{i}"
            img = np.abs(rng.normal(size=(3, 4, 4)))
            segments[sid] = type("Rec", (), {"rgb": img})()
            members.append(sid)
        dst = Concept(layer=1, centroid=rng.normal(size=4), members=members,
                      concept_id="dst")
        src = Concept(layer=0, centroid=np.zeros(3), members=members[:3],
                      concept_id="src")
        grads = [netcore.distance_grad(
            model, netcore.forward_to(model, segments[m].rgb, 0), 0, 1,
            dst.centroid) for m in dst.members]
        v = -np.mean([g.ravel() for g in grads], axis=0)
        cav = CAV(layer=0, direction=v / np.linalg.norm(v), accuracy=1.0)
        pos = itcav_edge(model, src, dst, segments, [], runs=20, seed=0,
                         cavs=[cav] * 20)
        anti = CAV(layer=0, direction=-cav.direction, accuracy=1.0)
        neg = itcav_edge(model, src, dst, segments, [], runs=20, seed=0,
                         cavs=[anti] * 20)
        sample = [0.8, 0.75, 0.9, 0.85, 0.7]
        p_err = abs(ttest_two_sided(sample, 0.5)
                    - scipy.stats.ttest_1samp(sample, 0.5).pvalue)
        rng2 = np.random.default_rng(99)
        for _ in range(25):
            s = rng2.random(int(rng2.integers(3, 12)))
            p_err = max(p_err, abs(ttest_two_sided(s.tolist(), 0.5)
                                   - scipy.stats.ttest_1samp(s, 0.5).pvalue))
        elapsed = time.perf_counter() - start
        ok = (pos is not None and pos.weight == 1.0 and pos.p_value == 0.0
              and neg is not None and neg.weight == 0.0 and p_err < 1e-6
              and elapsed < 30)
        verdict("itcav analytic cases", ok,
                f"aligned edge weight {pos.weight} == 1.0, anti-aligned "
                f"{neg.weight} == 0.0, t-test max |p - scipy| {p_err:.2e} "
                f"< 1e-6, {elapsed:.1f}s < 30s")

    def test_graph_validity_and_determinism(self, toy_model, toy_vcc,
                                            class0_images, random_pool):
        start = time.perf_counter()
        toy_vcc.validate()
        again = graph.build_vcc(toy_model, class0_images, random_pool,
                                class_label=0, seed=BUILD_SEED)
        again.validate()
        a = formats.write_vcc_json(toy_vcc)
        b = formats.write_vcc_json(again)
        elapsed = time.perf_counter() - start
        verdict("graph validity + determinism", a == b and elapsed < 600,
                f"invariants hold, two seed-{BUILD_SEED} builds byte-identical "
                f"({len(a)} bytes), {elapsed:.1f}s < 10min")
