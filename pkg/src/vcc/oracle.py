"""Uniform model access for the pipeline stages.

The segmentation, concept and edge stages only need a handful of model
operations. `as_oracle` adapts a LayeredModel to that surface; the bridge
client exposes the same surface for models hosted out of process.
"""

from __future__ import annotations

import numpy as np

from . import netcore
from .netcore import LayeredModel


class InCoreOracle:
    """Direct evaluation of an in-process LayeredModel."""

    def __init__(self, model: LayeredModel):
        self.model = model

    @property
    def input_shape(self):
        return self.model.input_shape

    @property
    def tap_layers(self):
        return self.model.tap_layers

    @property
    def class_count(self):
        return self.model.class_count

    def layer_output_shape(self, layer: int):
        return self.model.layer_output_shape(layer)

    def forward_to(self, image: np.ndarray, layer: int) -> np.ndarray:
        return netcore.forward_to(self.model, image, layer)

    def forward_between(self, activation: np.ndarray, from_layer: int, to_layer: int) -> np.ndarray:
        return netcore.forward_between(self.model, activation, from_layer, to_layer)

    def forward_full(self, image: np.ndarray) -> np.ndarray:
        return netcore.forward_full(self.model, image)

    def distance_grad(self, activation: np.ndarray, from_layer: int, to_layer: int,
                      centroid: np.ndarray) -> np.ndarray:
        return netcore.distance_grad(self.model, activation, from_layer, to_layer, centroid)

    def logit_grad(self, activation: np.ndarray, from_layer: int, class_index: int) -> np.ndarray:
        return netcore.logit_grad(self.model, activation, from_layer, class_index)


def as_oracle(model):
    if isinstance(model, LayeredModel):
        return InCoreOracle(model)
    if hasattr(model, "forward_to") and hasattr(model, "distance_grad"):
        return model
    raise TypeError(f"cannot adapt {type(model)!r} to a model oracle")
