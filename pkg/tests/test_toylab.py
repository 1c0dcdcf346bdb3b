"""toylab: synthetic scene generation, the toy CNN, and dataset persistence."""

import numpy as np
import pytest

from vcc import netcore, toylab
from vcc.errors import InvalidInputError
from vcc.toylab import (IMAGE_SIZE, SyntheticScene, all_class_combos,
                        build_toy_cnn, default_classes, generate_dataset,
                        generate_random_pool, load_dataset, make_scene,
                        save_dataset)


class TestScenes:
    def test_deterministic_for_fixed_seed(self):
        a = make_scene(3, 0, 5, "circle", "red", 0)
        b = make_scene(3, 0, 5, "circle", "red", 0)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.texture == b.texture

    def test_different_scene_index_differs(self):
        a = make_scene(3, 0, 5, "circle", "red", 0)
        b = make_scene(3, 0, 6, "circle", "red", 0)
        assert not np.array_equal(a.image, b.image)

    def test_mask_area_within_bounds(self):
        total = IMAGE_SIZE * IMAGE_SIZE
        for shape in toylab.SHAPES:
            for i in range(40):
                scene = make_scene(11, 0, i, shape, "green", 0)
                frac = scene.mask.sum() / total
                assert 0.05 <= frac <= 0.60, (shape, i, frac)

    def test_shape_region_painted_in_class_color(self):
        scene = make_scene(1, 0, 0, "square", "blue", 0)
        inside = scene.image[:, scene.mask].mean(axis=1)
        # blue fill: dominant final channel
        assert inside[2] > inside[0] and inside[2] > inside[1]

    def test_pixels_in_unit_range(self):
        scene = make_scene(2, 1, 3, "triangle", "red", 1)
        assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0

    def test_empty_mask_rejected(self):
        with pytest.raises(InvalidInputError):
            SyntheticScene(image=np.zeros((3, 64, 64)), label=0, shape="circle",
                           color="red", texture=0,
                           mask=np.zeros((64, 64), dtype=bool))


class TestDataset:
    def test_counts_and_labels(self):
        classes = default_classes(3)
        data = generate_dataset(0, classes, 4)
        assert len(data) == 12
        for label, (shape, color) in enumerate(classes):
            members = [s for s in data if s.label == label]
            assert len(members) == 4
            assert all(s.shape == shape and s.color == color for s in members)

    def test_deterministic(self):
        a = generate_dataset(5, default_classes(2), 3)
        b = generate_dataset(5, default_classes(2), 3)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.image, sb.image)

    def test_unknown_class_rejected(self):
        with pytest.raises(InvalidInputError):
            generate_dataset(0, [("hexagon", "red")], 1)

    def test_class_order_covers_both_factors(self):
        assert len(all_class_combos()) == 9
        assert default_classes(9) != []
        shapes = {s for s, _ in default_classes(3)}
        colors = {c for _, c in default_classes(3)}
        assert len(shapes) == 3 and len(colors) == 3

    def test_bad_class_count_rejected(self):
        with pytest.raises(InvalidInputError):
            default_classes(0)
        with pytest.raises(InvalidInputError):
            default_classes(10)


class TestPool:
    def test_deterministic_and_sized(self):
        a = generate_random_pool(1, 10, default_classes(2))
        b = generate_random_pool(1, 10, default_classes(2))
        assert len(a) == 10
        for xa, xb in zip(a, b):
            np.testing.assert_array_equal(xa, xb)
            assert xa.shape == (3, IMAGE_SIZE, IMAGE_SIZE)

    def test_excludes_training_classes(self):
        # scene-type negatives are drawn only from held-out shape/color combos;
        # even-index entries are uniform noise
        pool = generate_random_pool(2, 8, default_classes(2))
        assert all(p.min() >= 0.0 and p.max() <= 1.0 for p in pool)


class TestArchitecture:
    def test_taps_and_receptive_fields(self):
        model = build_toy_cnn(0, 2)
        assert model.tap_layers == (5, 7, 9, 11)
        rfs = [netcore.receptive_field(model, t) for t in model.tap_layers]
        assert rfs == [9, 17, 33, 49]

    def test_shapes_through_network(self):
        model = build_toy_cnn(0, 3)
        x = np.zeros((3, 64, 64))
        assert netcore.forward_to(model, x, 5).shape == (16, 16, 16)
        assert netcore.forward_to(model, x, 7).shape == (32, 8, 8)
        assert netcore.forward_to(model, x, 9).shape == (32, 8, 8)
        assert netcore.forward_to(model, x, 11).shape == (64, 4, 4)
        assert netcore.forward_full(model, x).shape == (3,)

    def test_seed_changes_weights(self):
        a = build_toy_cnn(0, 2)
        b = build_toy_cnn(1, 2)
        assert not np.array_equal(a.layers[0].weight, b.layers[0].weight)


class TestTraining:
    def test_session_model_fits_training_set(self, toy_model, toy_dataset):
        images = np.stack([s.image for s in toy_dataset])
        labels = np.array([s.label for s in toy_dataset])
        assert toylab.accuracy(toy_model, images, labels) >= 0.90

    def test_session_model_generalizes(self, toy_model, eval_dataset):
        images = np.stack([s.image for s in eval_dataset])
        labels = np.array([s.label for s in eval_dataset])
        assert toylab.accuracy(toy_model, images, labels) >= 0.90

    def test_weights_are_f32_exact(self, toy_model):
        for spec in toy_model.layers:
            if spec.weight is not None:
                np.testing.assert_array_equal(
                    spec.weight, spec.weight.astype(np.float32).astype(np.float64))

    def test_empty_dataset_rejected(self):
        with pytest.raises(InvalidInputError):
            toylab.train_toy_cnn([], seed=0)


class TestPersistence:
    def test_round_trip_preserves_scenes_up_to_quantization(self, tmp_path):
        data = generate_dataset(4, default_classes(2), 2)
        save_dataset(data, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert len(back) == len(data)
        for sa, sb in zip(data, back):
            assert sa.label == sb.label
            assert (sa.shape, sa.color, sa.texture) == (sb.shape, sb.color, sb.texture)
            np.testing.assert_array_equal(sa.mask, sb.mask)
            # images pass through 8-bit encoding
            assert np.abs(sa.image - sb.image).max() <= 0.5 / 255 + 1e-12

    def test_second_round_trip_is_exact(self, tmp_path):
        data = generate_dataset(6, default_classes(2), 2)
        save_dataset(data, tmp_path / "a")
        once = load_dataset(tmp_path / "a")
        save_dataset(once, tmp_path / "b")
        twice = load_dataset(tmp_path / "b")
        for sa, sb in zip(once, twice):
            np.testing.assert_array_equal(sa.image, sb.image)
