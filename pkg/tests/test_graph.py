"""graph: metrics and path arithmetic on hand-built fixtures, suppression algebra."""

import numpy as np
import pytest

from vcc import formats, graph, netcore
from vcc.concepts import Concept, ConceptLayer
from vcc.errors import (InsufficientDataError, InvalidConceptError,
                        InvalidInputError, NoPathError, UndefinedMetricError)
from vcc.graph import (BuildConfig, SuppressionConfig, VCCGraph, aps,
                       enumerate_paths, layer_metrics, path_count,
                       suppress_concept, suppression_curve)
from vcc.itcav import CLASS_TOKEN, EdgeStat


def edge(src, dst, w, p=0.01):
    return EdgeStat(src=src, dst=dst, weight=w, p_value=p, run_scores=[w, w])


def concept(layer, cid, dim=2):
    return Concept(layer=layer, centroid=np.ones(dim), members=["m_" + cid],
                   concept_id=cid)


def two_layer_graph():
    layers = [
        ConceptLayer(layer=0, concepts=[concept(0, "a1"), concept(0, "a2")],
                     segment_count=10),
        ConceptLayer(layer=1, concepts=[concept(1, "b1"), concept(1, "b2")],
                     segment_count=8),
    ]
    edges = [edge("a1", "b1", 0.5), edge("a1", "b2", 0.3), edge("a2", "b1", 0.9)]
    class_edges = [edge("b1", CLASS_TOKEN, 1.0), edge("b2", CLASS_TOKEN, 0.8)]
    return VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                    edges=edges, class_edges=class_edges)


class TestValidation:
    def test_valid_graph_accepted(self):
        g = two_layer_graph()
        assert g.concept("a1").concept_id == "a1"

    def test_layer_skipping_edge_rejected(self):
        layers = [ConceptLayer(layer=0, concepts=[concept(0, "a")]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b")]),
                  ConceptLayer(layer=2, concepts=[concept(2, "c")])]
        with pytest.raises(InvalidInputError):
            VCCGraph(tap_layers=[0, 1, 2], layers=layers, class_label=0,
                     edges=[edge("a", "c", 0.5)], class_edges=[])

    def test_unknown_concept_rejected(self):
        layers = [ConceptLayer(layer=0, concepts=[concept(0, "a")]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        with pytest.raises(InvalidInputError):
            VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                     edges=[edge("a", "ghost", 0.5)], class_edges=[])

    def test_insignificant_retained_edge_rejected(self):
        layers = [ConceptLayer(layer=0, concepts=[concept(0, "a")]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        with pytest.raises(InvalidInputError):
            VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                     edges=[edge("a", "b", 0.5, p=0.5)], class_edges=[])

    def test_class_edge_must_leave_deepest_layer(self):
        layers = [ConceptLayer(layer=0, concepts=[concept(0, "a")]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        with pytest.raises(InvalidInputError):
            VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                     edges=[], class_edges=[edge("a", CLASS_TOKEN, 0.5)])


class TestSerialization:
    def test_round_trip_preserves_bytes(self):
        g = two_layer_graph()
        data = formats.write_vcc_json(g)
        g2 = formats.read_vcc_json(data)
        assert formats.write_vcc_json(g2) == data

    def test_unknown_format_rejected(self):
        with pytest.raises(InvalidInputError):
            VCCGraph.from_dict({"format": "nope"})


class TestMetrics:
    def test_hand_computed_values(self):
        stats = layer_metrics(two_layer_graph())
        # layer 0: 3 edges over 2 concepts; weights 0.5, 0.3, 0.9
        assert stats[0]["branching_factor"] == pytest.approx(1.5)
        assert stats[0]["concept_count"] == 2
        assert stats[0]["edge_weight_mean"] == pytest.approx((0.5 + 0.3 + 0.9) / 3)
        assert stats[0]["edge_weight_variance"] == pytest.approx(
            np.var([0.5, 0.3, 0.9]))
        # layer 1 (deepest): outgoing edges are the class edges
        assert stats[1]["branching_factor"] == pytest.approx(1.0)
        assert stats[1]["edge_weight_mean"] == pytest.approx(0.9)

    def test_single_edge_degenerate_stats(self):
        layers = [ConceptLayer(layer=0, concepts=[concept(0, "a")]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        g = VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                     edges=[edge("a", "b", 0.9)], class_edges=[])
        stats = layer_metrics(g)
        assert stats[0]["edge_weight_mean"] == pytest.approx(0.9)
        assert stats[0]["edge_weight_variance"] == 0.0

    def test_empty_layer_marked_absent(self):
        layers = [ConceptLayer(layer=0, concepts=[]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        g = VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                     edges=[], class_edges=[edge("b", CLASS_TOKEN, 0.5)])
        stats = layer_metrics(g)
        assert stats[0]["branching_factor"] is None
        assert stats[0]["concept_count"] == 0


class TestPaths:
    def test_single_path_mean(self):
        layers = [ConceptLayer(layer=0, concepts=[concept(0, "a")]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        g = VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                     edges=[edge("a", "b", 0.4)],
                     class_edges=[edge("b", CLASS_TOKEN, 0.6)])
        assert aps(g, "a") == pytest.approx(0.5)

    def test_two_path_average(self):
        layers = [ConceptLayer(layer=0, concepts=[concept(0, "a")]),
                  ConceptLayer(layer=1, concepts=[concept(1, "b1"),
                                                  concept(1, "b2")])]
        g = VCCGraph(tap_layers=[0, 1], layers=layers, class_label=0,
                     edges=[edge("a", "b1", 0.5), edge("a", "b2", 0.3)],
                     class_edges=[edge("b1", CLASS_TOKEN, 1.0),
                                  edge("b2", CLASS_TOKEN, 0.8)])
        assert aps(g, "a") == pytest.approx((0.75 + 0.55) / 2)

    def test_deepest_concept_single_class_edge(self):
        layers = [ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        g = VCCGraph(tap_layers=[1], layers=layers, class_label=0,
                     edges=[], class_edges=[edge("b", CLASS_TOKEN, 0.9)])
        assert aps(g, "b") == pytest.approx(0.9)

    def test_no_path_raises(self):
        g = two_layer_graph()
        g.class_edges = []
        with pytest.raises(NoPathError):
            aps(g, "a1")

    def test_enumerator_agrees_with_dp_count(self):
        g = two_layer_graph()
        for cid in ("a1", "a2", "b1", "b2"):
            assert len(enumerate_paths(g, cid)) == path_count(g, cid)

    def test_aps_within_edge_weight_range(self):
        g = two_layer_graph()
        for cid in ("a1", "a2"):
            weights = [e.weight for p in enumerate_paths(g, cid) for e in p]
            assert min(weights) <= aps(g, cid) <= max(weights)


class TestLS:
    def test_sums_member_logits(self, toy_model, toy_vcc, toy_segments):
        ly = next(l for l in toy_vcc.layers if l.concepts)
        c = ly.concepts[0]
        got = graph.ls(toy_model, c, toy_segments, 0)
        want = sum(float(netcore.forward_full(toy_model, toy_segments[m].rgb)[0])
                   for m in c.members)
        assert got == pytest.approx(want, rel=1e-9)

    def test_additive_over_member_partition(self, toy_model, toy_vcc, toy_segments):
        ly = next(l for l in toy_vcc.layers if l.concepts)
        c = ly.concepts[0]
        parts = [Concept(layer=c.layer, centroid=c.centroid, members=[m],
                         concept_id=f"part{i}")
                 for i, m in enumerate(c.members)]
        total = sum(graph.ls(toy_model, p, toy_segments, 0) for p in parts)
        assert graph.ls(toy_model, c, toy_segments, 0) == pytest.approx(total, rel=1e-9)


class TestSuppression:
    def test_eps_zero_is_identity(self):
        z = np.random.default_rng(0).normal(size=(4, 3, 3))
        q = np.ones(4)
        np.testing.assert_array_equal(suppress_concept(z, q, 0.0), z)

    def test_projection_drops_by_eps(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(4, 3, 3))
        q = rng.normal(size=4)
        qhat = q / np.linalg.norm(q)
        before = float(netcore.gap_pool(z) @ qhat)
        after = float(netcore.gap_pool(suppress_concept(z, q, 0.7)) @ qhat)
        assert before - after == pytest.approx(0.7)

    def test_pooled_equal_centroid_zeroed_at_full_eps(self):
        q = np.array([3.0, 4.0])
        z = np.broadcast_to(q[:, None, None], (2, 2, 2)).copy()
        out = suppress_concept(z, q, float(np.linalg.norm(q)))
        np.testing.assert_allclose(netcore.gap_pool(out), 0.0, atol=1e-12)

    def test_zero_centroid_rejected(self):
        with pytest.raises(InvalidConceptError):
            suppress_concept(np.ones((2, 2, 2)), np.zeros(2), 1.0)

    def test_epsilon_grid_must_increase(self):
        with pytest.raises(InvalidInputError):
            SuppressionConfig(epsilons=[0.0, 2.0, 1.0], layers=[1])

    def test_eps_zero_curve_is_baseline_accuracy(self, toy_model, eval_dataset):
        images = [s.image for s in eval_dataset if s.label == 0][:8]
        cfg = SuppressionConfig(epsilons=[0.0], layers=list(toy_model.tap_layers),
                                seed=0)
        out = suppression_curve(toy_model, images, [0] * len(images), cfg)
        preds = [int(np.argmax(netcore.forward_full(toy_model, im))) for im in images]
        baseline = float(np.mean([p == 0 for p in preds]))
        assert out["accuracies"][0] == pytest.approx(baseline)


class TestCorrelation:
    def test_insufficient_points_raise(self):
        layers = [ConceptLayer(layer=1, concepts=[concept(1, "b")])]
        g = VCCGraph(tap_layers=[1], layers=layers, class_label=0,
                     edges=[], class_edges=[])
        with pytest.raises(InsufficientDataError):
            graph.aps_ls_correlation(g, None, {})


class TestNearestConceptDiff:
    def test_exact_centroid_match_assigned_distance_zero(self, toy_model,
                                                         toy_vcc, class0_images):
        import copy
        far = copy.deepcopy(toy_vcc)
        for ly in far.layers:
            for c in ly.concepts:
                c.centroid = c.centroid + 1e6
        out = graph.nearest_concept_diff(toy_vcc, far, class0_images[0],
                                         toy_model, seed=graph_seed())
        assert out["assignments"], "expected at least one segment"
        for info in out["assignments"].values():
            assert info["graph"] == "a"
        for layer_tally in out["tallies"].values():
            assert layer_tally["b"] == 0

    def test_mismatched_tap_layers_rejected(self, toy_vcc):
        import copy
        other = copy.deepcopy(toy_vcc)
        other.tap_layers = [1, 2, 3, 4]
        with pytest.raises(InvalidInputError):
            graph.nearest_concept_diff(toy_vcc, other, np.zeros((3, 64, 64)), None)


def graph_seed():
    return 0


class TestBuildConfig:
    def test_round_trip(self):
        cfg = BuildConfig(runs=10, alpha=0.01)
        assert BuildConfig.from_dict(cfg.to_dict()) == cfg

    def test_bad_values_rejected(self):
        with pytest.raises(InvalidInputError):
            BuildConfig(runs=1)
        with pytest.raises(InvalidInputError):
            BuildConfig(alpha=1.5)
        with pytest.raises(InvalidInputError):
            BuildConfig(null_protocol="nope")
