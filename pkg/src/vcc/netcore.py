"""Minimal layered network engine.

Single-image public API over a stack of conv / relu / maxpool / dense /
flatten / global-average-pool layers, with reverse-mode vector-Jacobian
products for the distance gradient and training-grade weight gradients.

Arithmetic is float64 internally; weights are stored as float32 on disk
and promoted on load, so evaluation is deterministic for fixed weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, LayerIndexError, UnsupportedLayerError

SPATIAL_KINDS = ("conv2d", "relu", "maxpool2d")
LAYER_KINDS = ("conv2d", "relu", "maxpool2d", "dense", "flatten", "global-average-pool")


@dataclass
class LayerSpec:
    """One layer of a LayeredModel.

    Parameter fields are kind-specific; unused ones stay None. Conv weights
    are (out_ch, in_ch, k, k), dense weights (out_dim, in_dim).
    """

    kind: str
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    in_ch: int | None = None
    out_ch: int | None = None
    in_dim: int | None = None
    out_dim: int | None = None
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidInputError(f"unknown layer kind {self.kind!r}")


def conv2d(out_ch: int, in_ch: int, kernel: int, stride: int = 1, padding: int = 0,
           weight: np.ndarray | None = None, bias: np.ndarray | None = None) -> LayerSpec:
    if weight is None:
        weight = np.zeros((out_ch, in_ch, kernel, kernel))
    if bias is None:
        bias = np.zeros(out_ch)
    weight = np.asarray(weight, dtype=np.float64).reshape(out_ch, in_ch, kernel, kernel)
    bias = np.asarray(bias, dtype=np.float64).reshape(out_ch)
    return LayerSpec("conv2d", kernel=kernel, stride=stride, padding=padding,
                     in_ch=in_ch, out_ch=out_ch, weight=weight, bias=bias)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool2d(kernel: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool2d", kernel=kernel, stride=stride if stride is not None else kernel)


def dense(out_dim: int, in_dim: int,
          weight: np.ndarray | None = None, bias: np.ndarray | None = None) -> LayerSpec:
    if weight is None:
        weight = np.zeros((out_dim, in_dim))
    if bias is None:
        bias = np.zeros(out_dim)
    weight = np.asarray(weight, dtype=np.float64).reshape(out_dim, in_dim)
    bias = np.asarray(bias, dtype=np.float64).reshape(out_dim)
    return LayerSpec("dense", in_dim=in_dim, out_dim=out_dim, weight=weight, bias=bias)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def global_average_pool() -> LayerSpec:
    return LayerSpec("global-average-pool")


def _out_hw(h: int, w: int, k: int, s: int, p: int) -> tuple[int, int]:
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    if oh < 1 or ow < 1:
        raise InvalidInputError(f"layer output collapses to zero size ({oh}x{ow})")
    return oh, ow


@dataclass
class LayeredModel:
    """Ordered differentiable layer stack with named tap points.

    Immutable after construction for inference purposes; the trainer is the
    single writer of `weight`/`bias` payloads.
    """

    input_shape: tuple[int, int, int]  # (3, H, W)
    layers: list[LayerSpec]
    class_count: int
    tap_layers: tuple[int, ...] = ()
    _shapes: list[tuple] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.input_shape) != 3 or self.input_shape[0] != 3:
            raise InvalidInputError("input shape must be (3, H, W)")
        self.tap_layers = tuple(self.tap_layers)
        if any(b <= a for a, b in zip(self.tap_layers, self.tap_layers[1:])):
            raise InvalidInputError("tap indices must be strictly increasing")
        self._shapes = self._chain_shapes()
        if self.tap_layers:
            if self.tap_layers[-1] >= len(self.layers):
                raise LayerIndexError("tap index beyond last layer")
        out = self._shapes[-1]
        if out != (self.class_count,):
            raise InvalidInputError(
                f"final layer produces {out}, expected logits of length {self.class_count}")

    def _chain_shapes(self) -> list[tuple]:
        """Output shape of each layer, validating internal consistency."""
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            k = layer.kind
            if k == "conv2d":
                if len(shape) != 3 or shape[0] != layer.in_ch:
                    raise InvalidInputError(f"layer {i}: conv expects {layer.in_ch} channels, got {shape}")
                oh, ow = _out_hw(shape[1], shape[2], layer.kernel, layer.stride, layer.padding)
                shape = (layer.out_ch, oh, ow)
            elif k == "relu":
                pass
            elif k == "maxpool2d":
                if len(shape) != 3:
                    raise InvalidInputError(f"layer {i}: maxpool needs a spatial input, got {shape}")
                oh, ow = _out_hw(shape[1], shape[2], layer.kernel, layer.stride, 0)
                shape = (shape[0], oh, ow)
            elif k == "flatten":
                shape = (int(np.prod(shape)),)
            elif k == "global-average-pool":
                if len(shape) != 3:
                    raise InvalidInputError(f"layer {i}: GAP needs a spatial input, got {shape}")
                shape = (shape[0],)
            elif k == "dense":
                if shape != (layer.in_dim,):
                    raise InvalidInputError(f"layer {i}: dense expects ({layer.in_dim},), got {shape}")
                shape = (layer.out_dim,)
            shapes.append(shape)
        return shapes

    def layer_output_shape(self, layer: int) -> tuple:
        self._check_index(layer)
        return self._shapes[layer]

    def _check_index(self, layer: int):
        if not 0 <= layer < len(self.layers):
            raise LayerIndexError(f"layer index {layer} out of range [0, {len(self.layers)})")


# ---------------------------------------------------------------------------
# batched layer primitives (internal; public API is single-image)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, s: int, p: int) -> tuple[np.ndarray, tuple[int, int]]:
    """(N,C,H,W) -> (N, C*k*k, OH*OW) patch matrix, zero padded."""
    n, c, h, w = x.shape
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, oh, ow, k, k),
        strides=(sn, sc, sh * s, sw * s, sh, sw), writeable=False)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
    return np.ascontiguousarray(cols), (oh, ow)


def _col2im(gcols: np.ndarray, x_shape: tuple, k: int, s: int, p: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back to input layout."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * p, w + 2 * p
    oh = (hp - k) // s + 1
    ow = (wp - k) // s + 1
    gx = np.zeros((n, c, hp, wp))
    g6 = gcols.reshape(n, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            gx[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += g6[:, :, ki, kj]
    if p:
        gx = gx[:, :, p:-p, p:-p]
    return gx


def _conv_forward(layer: LayerSpec, x: np.ndarray):
    cols, (oh, ow) = _im2col(x, layer.kernel, layer.stride, layer.padding)
    wmat = layer.weight.reshape(layer.out_ch, -1)
    y = np.einsum("oc,ncp->nop", wmat, cols, optimize=True) + layer.bias[None, :, None]
    return y.reshape(x.shape[0], layer.out_ch, oh, ow), cols


def _conv_backward(layer: LayerSpec, x_shape, cols, gy):
    n, o = gy.shape[:2]
    gy2 = gy.reshape(n, o, -1)
    wmat = layer.weight.reshape(o, -1)
    gcols = np.einsum("oc,nop->ncp", wmat, gy2, optimize=True)
    gx = _col2im(gcols, x_shape, layer.kernel, layer.stride, layer.padding)
    gw = np.einsum("nop,ncp->oc", gy2, cols, optimize=True).reshape(layer.weight.shape)
    gb = gy2.sum(axis=(0, 2))
    return gx, gw, gb


def _maxpool_forward(layer: LayerSpec, x: np.ndarray):
    cols, (oh, ow) = _im2col(x, layer.kernel, layer.stride, 0)
    n, c = x.shape[:2]
    kk = layer.kernel * layer.kernel
    windows = cols.reshape(n, c, kk, oh * ow)
    idx = windows.argmax(axis=2)  # first max wins: deterministic tie-break
    y = np.take_along_axis(windows, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return y.reshape(n, c, oh, ow), (idx, x.shape, oh, ow)


def _maxpool_backward(layer: LayerSpec, ctx, gy):
    idx, x_shape, oh, ow = ctx
    n, c = x_shape[:2]
    kk = layer.kernel * layer.kernel
    gcols = np.zeros((n, c, kk, oh * ow))
    np.put_along_axis(gcols, idx[:, :, None, :], gy.reshape(n, c, 1, oh * ow), axis=2)
    return _col2im(gcols.reshape(n, c * kk, oh * ow), x_shape, layer.kernel, layer.stride, 0)


def _layer_forward(layer: LayerSpec, x: np.ndarray):
    """Returns (output, context-for-backward). Batched: leading axis is N."""
    k = layer.kind
    if k == "conv2d":
        y, cols = _conv_forward(layer, x)
        return y, (x.shape, cols)
    if k == "relu":
        mask = x > 0
        return x * mask, mask
    if k == "maxpool2d":
        return _maxpool_forward(layer, x)
    if k == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if k == "global-average-pool":
        return x.mean(axis=(2, 3)), x.shape
    if k == "dense":
        return x @ layer.weight.T + layer.bias, x
    raise UnsupportedLayerError(layer.kind)


def _layer_backward(layer: LayerSpec, ctx, gy, want_weight_grads=False):
    """VJP of one layer. Returns (gx, gw, gb); gw/gb None unless requested."""
    k = layer.kind
    if k == "conv2d":
        x_shape, cols = ctx
        gx, gw, gb = _conv_backward(layer, x_shape, cols, gy)
        return gx, (gw if want_weight_grads else None), (gb if want_weight_grads else None)
    if k == "relu":
        return gy * ctx, None, None
    if k == "maxpool2d":
        return _maxpool_backward(layer, ctx, gy), None, None
    if k == "flatten":
        return gy.reshape(ctx), None, None
    if k == "global-average-pool":
        n, c, h, w = ctx
        return np.broadcast_to(gy[:, :, None, None], ctx) / (h * w), None, None
    if k == "dense":
        x = ctx
        gx = gy @ layer.weight
        if want_weight_grads:
            return gx, gy.T @ x, gy.sum(axis=0)
        return gx, None, None
    raise UnsupportedLayerError(layer.kind)


# ---------------------------------------------------------------------------
# public single-image operations
# ---------------------------------------------------------------------------

def _as_input(model: LayeredModel, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != model.input_shape:
        raise InvalidInputError(f"image shape {image.shape} != model input {model.input_shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidInputError("image contains non-finite values")
    return image


def _run_layers(model: LayeredModel, x: np.ndarray, lo: int, hi: int, keep_ctx=False):
    """Apply layers lo..hi inclusive to batched x; optionally keep VJP contexts."""
    ctxs = []
    for i in range(lo, hi + 1):
        x, ctx = _layer_forward(model.layers[i], x)
        if keep_ctx:
            ctxs.append(ctx)
    return (x, ctxs) if keep_ctx else x


def forward_to(model: LayeredModel, image: np.ndarray, layer: int) -> np.ndarray:
    """Activation at `layer` for a single image: f_layer(...f_1(image))."""
    model._check_index(layer)
    x = _as_input(model, image)[None]
    return _run_layers(model, x, 0, layer)[0]


def forward_between(model: LayeredModel, activation: np.ndarray, from_layer: int,
                    to_layer: int) -> np.ndarray:
    """Continue evaluation from the output of `from_layer` to `to_layer`."""
    model._check_index(from_layer)
    model._check_index(to_layer)
    if from_layer >= to_layer:
        raise LayerIndexError(f"from_layer {from_layer} must precede to_layer {to_layer}")
    activation = np.asarray(activation, dtype=np.float64)
    expect = model.layer_output_shape(from_layer)
    if activation.shape != expect:
        raise InvalidInputError(f"activation shape {activation.shape} != layer output {expect}")
    return _run_layers(model, activation[None], from_layer + 1, to_layer)[0]


def forward_full(model: LayeredModel, image: np.ndarray) -> np.ndarray:
    """Class logits (pre-softmax) for a single image."""
    x = _as_input(model, image)[None]
    return _run_layers(model, x, 0, len(model.layers) - 1)[0]


def forward_batch(model: LayeredModel, images: np.ndarray, layer: int | None = None) -> np.ndarray:
    """Batched convenience wrapper; layer None means full logits."""
    if layer is None:
        layer = len(model.layers) - 1
    images = np.asarray(images, dtype=np.float64)
    return _run_layers(model, images, 0, layer)


def gap_pool(activation: np.ndarray) -> np.ndarray:
    """Spatial global average pooling of a single C,H,W activation."""
    activation = np.asarray(activation, dtype=np.float64)
    if activation.ndim != 3:
        raise InvalidInputError(f"expected a C,H,W tensor, got shape {activation.shape}")
    return activation.mean(axis=(1, 2))


DISTANCE_EPS = 1e-12


def distance_grad(model: LayeredModel, activation: np.ndarray, from_layer: int,
                  to_layer: int, centroid: np.ndarray) -> np.ndarray:
    """Gradient over `activation` of ||GAP(f_to(...f_{from+1}(activation))) - centroid||_2.

    The deeper activation is pooled before the distance so it lives in the
    centroid's space. At an exact centroid match the norm is not
    differentiable and the zero tensor is returned.
    """
    model._check_index(from_layer)
    model._check_index(to_layer)
    if from_layer >= to_layer:
        raise LayerIndexError(f"from_layer {from_layer} must precede to_layer {to_layer}")
    activation = np.asarray(activation, dtype=np.float64)
    expect = model.layer_output_shape(from_layer)
    if activation.shape != expect:
        raise InvalidInputError(f"activation shape {activation.shape} != layer output {expect}")
    centroid = np.asarray(centroid, dtype=np.float64)

    x = activation[None]
    z, ctxs = _run_layers(model, x, from_layer + 1, to_layer, keep_ctx=True)
    if z.ndim != 4:
        raise UnsupportedLayerError("distance gradient needs a spatial activation at the target layer")
    c, h, w = z.shape[1:]
    if centroid.shape != (c,):
        raise InvalidInputError(f"centroid has dim {centroid.shape}, layer has {c} channels")
    pooled = z.mean(axis=(2, 3))[0]
    diff = pooled - centroid
    d = float(np.sqrt(np.sum(diff * diff)))
    if d < DISTANCE_EPS:
        return np.zeros_like(activation)
    gz = np.broadcast_to((diff / d)[None, :, None, None] / (h * w), z.shape).copy()
    g = gz
    for i in range(to_layer, from_layer, -1):
        g, _, _ = _layer_backward(model.layers[i], ctxs[i - from_layer - 1], g)
    return g[0]


def logit_grad(model: LayeredModel, activation: np.ndarray, from_layer: int,
               class_index: int) -> np.ndarray:
    """Gradient of the class logit w.r.t. the activation at `from_layer`."""
    model._check_index(from_layer)
    if not 0 <= class_index < model.class_count:
        raise InvalidInputError(f"class index {class_index} out of range")
    activation = np.asarray(activation, dtype=np.float64)
    expect = model.layer_output_shape(from_layer)
    if activation.shape != expect:
        raise InvalidInputError(f"activation shape {activation.shape} != layer output {expect}")
    last = len(model.layers) - 1
    logits, ctxs = _run_layers(model, activation[None], from_layer + 1, last, keep_ctx=True)
    g = np.zeros_like(logits)
    g[0, class_index] = 1.0
    for i in range(last, from_layer, -1):
        g, _, _ = _layer_backward(model.layers[i], ctxs[i - from_layer - 1], g)
    return g[0]


def backprop_weights(model: LayeredModel, batch: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch plus per-layer weight/bias gradients.

    Returns (loss, logits, grads) where grads maps layer index -> (gw, gb).
    """
    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = batch.shape[0]
    x = batch
    ctxs = []
    for layer in model.layers:
        x, ctx = _layer_forward(layer, x)
        ctxs.append(ctx)
    logits = x
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(probs[np.arange(n), labels] + 1e-300))
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    g /= n
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        has_w = layer.kind in ("conv2d", "dense")
        g, gw, gb = _layer_backward(layer, ctxs[i], g, want_weight_grads=has_w)
        if has_w:
            grads[i] = (gw, gb)
    return loss, logits, grads


def receptive_field(model: LayeredModel, layer: int) -> int:
    """Theoretical receptive field (width = height) at `layer`, in input pixels.

    Standard recursion over kernel sizes and strides, clamped at the input
    size. Only conv/relu/maxpool layers may appear at or before `layer`.
    """
    model._check_index(layer)
    rf, jump = 1, 1
    for i in range(layer + 1):
        spec = model.layers[i]
        if spec.kind not in SPATIAL_KINDS:
            raise UnsupportedLayerError(
                f"receptive field undefined past non-spatial layer {i} ({spec.kind})")
        if spec.kind == "conv2d":
            rf += (spec.kernel - 1) * jump
            jump *= spec.stride
        elif spec.kind == "maxpool2d":
            rf += (spec.kernel - 1) * jump
            jump *= spec.stride
    return min(rf, min(model.input_shape[1], model.input_shape[2]))
