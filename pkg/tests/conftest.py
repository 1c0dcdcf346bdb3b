"""Shared fixtures: one trained toy model and one built connectome per session."""

from __future__ import annotations

import numpy as np
import pytest

from vcc import formats, graph, segment, toylab

TRAIN_SEED = 1
BUILD_SEED = 7
N_CLASSES = 2
PER_CLASS = 60
POOL_SIZE = 60
BUILD_IMAGES = 50


@pytest.fixture(scope="session")
def toy_dataset():
    return toylab.generate_dataset(TRAIN_SEED, toylab.default_classes(N_CLASSES), PER_CLASS)


@pytest.fixture(scope="session")
def eval_dataset():
    return toylab.generate_dataset(TRAIN_SEED + 1_000_000,
                                   toylab.default_classes(N_CLASSES), 20)


@pytest.fixture(scope="session")
def random_pool():
    return toylab.generate_random_pool(TRAIN_SEED, POOL_SIZE,
                                       toylab.default_classes(N_CLASSES))


@pytest.fixture(scope="session")
def toy_model(toy_dataset):
    return toylab.train_toy_cnn(toy_dataset, TRAIN_SEED)


@pytest.fixture(scope="session")
def class0_images(toy_dataset):
    return [s.image for s in toy_dataset if s.label == 0][:BUILD_IMAGES]


@pytest.fixture(scope="session")
def toy_vcc(toy_model, class0_images, random_pool):
    return graph.build_vcc(toy_model, class0_images, random_pool,
                           class_label=0, seed=BUILD_SEED)


@pytest.fixture(scope="session")
def toy_segments(toy_model, toy_vcc, class0_images):
    seg = segment.topdown_segment(toy_model, class0_images, toy_vcc.tap_layers,
                                  seed=BUILD_SEED)
    return {s.segment_id: s for s in seg.all_segments()}


@pytest.fixture(scope="session")
def toy_model_path(toy_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "toy.json"
    formats.save_model(toy_model, path)
    return path
