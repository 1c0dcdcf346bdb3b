"""Numeric self-checks: gradients against central finite differences."""

from __future__ import annotations

import numpy as np

from . import netcore
from .netcore import LayeredModel

FD_STEP = 1e-3
FD_TOLERANCE = 1e-4


def random_probe_model(seed: int) -> LayeredModel:
    """Small random conv net with two spatial taps, for gradient probing."""
    rng = np.random.default_rng([seed, 0xFD])

    def conv(out_ch, in_ch, k, stride=1, padding=1):
        w = rng.normal(0.0, np.sqrt(2.0 / (in_ch * k * k)), size=(out_ch, in_ch, k, k))
        b = rng.normal(0.0, 0.1, size=out_ch)
        return netcore.conv2d(out_ch, in_ch, k, stride, padding, w, b)

    head = rng.normal(0.0, 0.5, size=(3, 6))
    layers = [
        conv(4, 3, 3), netcore.relu(),                 # 8x8, tap 1
        conv(6, 4, 3, stride=2), netcore.relu(),       # 4x4, tap 3
        netcore.global_average_pool(),
        netcore.dense(3, 6, weight=head),
    ]
    return LayeredModel(input_shape=(3, 8, 8), layers=layers,
                        class_count=3, tap_layers=(1, 3))


def _distance_and_signs(model: LayeredModel, activation: np.ndarray,
                        from_layer: int, to_layer: int,
                        centroid: np.ndarray) -> tuple[float, tuple]:
    """Pooled centroid distance plus the sign pattern at every relu input.

    The sign pattern identifies the linear region; a central difference
    whose two probes land in different regions straddles a kink and is not
    a valid derivative estimate.
    """
    x = np.asarray(activation, dtype=np.float64)
    signs = []
    for i in range(from_layer + 1, to_layer + 1):
        if model.layers[i].kind == "relu":
            signs.append((x > 0).tobytes())
        x = netcore.forward_between(model, x, i - 1, i)
    d = float(np.linalg.norm(netcore.gap_pool(x) - centroid))
    return d, tuple(signs)


def distance_grad_fd_error(seed: int, h: float = FD_STEP) -> float:
    """Max relative error of distance_grad vs central differences on one instance.

    Coordinates whose +h/-h probes fall in different relu linear regions
    are excluded: the derivative does not exist across the kink.
    """
    model = random_probe_model(seed)
    rng = np.random.default_rng([seed, 0xFD, 1])
    from_layer, to_layer = model.tap_layers
    activation = np.maximum(rng.normal(0.0, 1.0, size=model.layer_output_shape(from_layer)), 0.0)
    c = model.layer_output_shape(to_layer)[0]
    centroid = rng.normal(0.0, 1.0, size=c)
    grad = netcore.distance_grad(model, activation, from_layer, to_layer, centroid)
    fd = np.zeros_like(grad)
    valid = np.zeros(grad.shape, dtype=bool)
    it = np.nditer(activation, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bumped = activation.copy()
        bumped[idx] = activation[idx] + h
        d_plus, s_plus = _distance_and_signs(model, bumped, from_layer, to_layer, centroid)
        bumped[idx] = activation[idx] - h
        d_minus, s_minus = _distance_and_signs(model, bumped, from_layer, to_layer, centroid)
        if s_plus == s_minus:
            fd[idx] = (d_plus - d_minus) / (2 * h)
            valid[idx] = True
        it.iternext()
    scale = max(float(np.abs(fd[valid]).max()), 1e-8)
    return float(np.abs(grad[valid] - fd[valid]).max()) / scale


def gradient_validation(trials: int = 100, seed: int = 0) -> float:
    """Max relative finite-difference error over seeded random instances."""
    return max(distance_grad_fd_error(seed + t) for t in range(trials))
