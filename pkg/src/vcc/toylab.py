"""Synthetic scenes and a small trainable CNN with known concepts.

Scenes are 64x64 RGB images: a colored shape (circle/square/triangle in
red/green/blue) over one of four procedural background textures. The class
label is a deterministic function of (shape, color), so color, texture,
part and object concepts are known by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats, netcore
from .errors import InvalidInputError, TrainingFailure
from .netcore import LayeredModel

IMAGE_SIZE = 64
SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue")
N_TEXTURES = 4

_COLOR_RGB = {"red": (0.85, 0.1, 0.1), "green": (0.1, 0.8, 0.15), "blue": (0.15, 0.2, 0.9)}


@dataclass
class SyntheticScene:
    image: np.ndarray            # (3, 64, 64) float in [0, 1]
    label: int
    shape: str
    color: str
    texture: int
    mask: np.ndarray             # (64, 64) bool, the shape's support

    def __post_init__(self):
        if not self.mask.any():
            raise InvalidInputError("shape mask is empty")


def all_class_combos() -> list[tuple[str, str]]:
    return [(s, c) for s in SHAPES for c in COLORS]


def default_classes(n: int) -> list[tuple[str, str]]:
    """First n of a canonical shape x color order, spread over both factors."""
    order = [("circle", "red"), ("square", "green"), ("triangle", "blue"),
             ("circle", "green"), ("square", "blue"), ("triangle", "red"),
             ("circle", "blue"), ("square", "red"), ("triangle", "green")]
    if not 1 <= n <= len(order):
        raise InvalidInputError(f"class count must be in [1, {len(order)}]")
    return order[:n]


def _texture(rng: np.random.Generator, texture_id: int) -> np.ndarray:
    """(3, S, S) background in muted colors, distinct per texture id."""
    s = IMAGE_SIZE
    yy, xx = np.mgrid[0:s, 0:s]
    if texture_id == 0:  # checkerboard
        cell = 8
        board = ((yy // cell + xx // cell) % 2).astype(float)
        base = 0.35 + 0.25 * board
        img = np.stack([base, base, base * 0.9])
    elif texture_id == 1:  # diagonal stripes
        stripe = (np.sin((xx + yy) * (2 * np.pi / 12.0)) > 0).astype(float)
        img = np.stack([0.55 + 0.15 * stripe, 0.5 + 0.2 * stripe, 0.25 + 0.1 * stripe])
    elif texture_id == 2:  # smooth two-corner gradient
        gx, gy = xx / (s - 1), yy / (s - 1)
        img = np.stack([0.3 + 0.3 * gx, 0.25 + 0.2 * gy, 0.45 + 0.25 * gx * gy])
    else:  # smoothed blob noise
        noise = rng.random((s // 4, s // 4))
        big = np.kron(noise, np.ones((4, 4)))
        kernel = np.ones((5, 5)) / 25.0
        pad = np.pad(big, 2, mode="edge")
        sm = np.zeros_like(big)
        for dy in range(5):
            for dx in range(5):
                sm += kernel[dy, dx] * pad[dy:dy + s, dx:dx + s]
        img = np.stack([0.35 + 0.3 * sm, 0.3 + 0.25 * sm, 0.25 + 0.2 * sm])
    jitter = rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img + jitter, 0.0, 1.0)


def _shape_mask(rng: np.random.Generator, shape: str) -> np.ndarray:
    """Boolean support with area between 5% and 60% of the image."""
    s = IMAGE_SIZE
    yy, xx = np.mgrid[0:s, 0:s]
    if shape == "circle":
        r = rng.integers(9, 25)
        cx = rng.integers(r + 1, s - r - 1)
        cy = rng.integers(r + 1, s - r - 1)
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    if shape == "square":
        side = rng.integers(15, 45)
        x0 = rng.integers(1, s - side - 1)
        y0 = rng.integers(1, s - side - 1)
        return (xx >= x0) & (xx < x0 + side) & (yy >= y0) & (yy < y0 + side)
    if shape == "triangle":
        base = rng.integers(24, 56)
        height = int(base * 0.9)
        x0 = rng.integers(1, s - base - 1)
        y0 = rng.integers(1, s - height - 1)
        # upward triangle: apex centered over the base
        fy = (yy - y0) / height
        half = (1.0 - fy) * base / 2.0
        cx = x0 + base / 2.0
        return (yy >= y0) & (yy < y0 + height) & (np.abs(xx - cx) <= half)
    raise InvalidInputError(f"unknown shape {shape!r}")


def make_scene(seed: int, class_index: int, scene_index: int,
               shape: str, color: str, label: int) -> SyntheticScene:
    rng = np.random.default_rng([seed, class_index, scene_index])
    texture_id = int(rng.integers(0, N_TEXTURES))
    img = _texture(rng, texture_id)
    mask = _shape_mask(rng, shape)
    fill = np.array(_COLOR_RGB[color])[:, None]
    shade = 1.0 + rng.normal(0.0, 0.03, size=mask.sum())
    img[:, mask] = np.clip(fill * shade, 0.0, 1.0)
    return SyntheticScene(image=img, label=label, shape=shape, color=color,
                          texture=texture_id, mask=mask)


def generate_dataset(seed: int, classes: list[tuple[str, str]],
                     per_class_count: int) -> list[SyntheticScene]:
    """Deterministic for fixed seed; exactly per_class_count scenes per class."""
    if per_class_count < 1:
        raise InvalidInputError("per_class_count must be >= 1")
    scenes = []
    for label, (shape, color) in enumerate(classes):
        if shape not in SHAPES or color not in COLORS:
            raise InvalidInputError(f"unknown class {(shape, color)!r}")
        for i in range(per_class_count):
            scenes.append(make_scene(seed, label, i, shape, color, label))
    return scenes


def generate_random_pool(seed: int, count: int,
                         training_classes: list[tuple[str, str]]) -> list[np.ndarray]:
    """Concept-neutral negatives: half uniform noise, half scenes drawn from
    shape/color combinations excluded from the training classes."""
    rng = np.random.default_rng([seed, 0xA11])
    excluded = [c for c in all_class_combos() if c not in training_classes]
    pool = []
    for i in range(count):
        if i % 2 == 0 or not excluded:
            pool.append(rng.random((3, IMAGE_SIZE, IMAGE_SIZE)))
        else:
            shape, color = excluded[int(rng.integers(0, len(excluded)))]
            scene = make_scene(seed + 7_000_003, len(training_classes) + 1, i, shape, color, -1)
            pool.append(scene.image)
    return pool


# ---------------------------------------------------------------------------
# the toy CNN and its trainer
# ---------------------------------------------------------------------------

@dataclass
class TrainRecipe:
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    min_accuracy: float = 0.90


def build_toy_cnn(seed: int, class_count: int) -> LayeredModel:
    """6-conv-block CNN on 3x64x64 input with 4 tap layers (relu outputs)."""
    rng = np.random.default_rng([seed, 0xC44])

    def he(out_ch, in_ch, k):
        scale = np.sqrt(2.0 / (in_ch * k * k))
        w = rng.normal(0.0, scale, size=(out_ch, in_ch, k, k))
        return netcore.conv2d(out_ch, in_ch, k, stride=1, padding=1, weight=w)

    def he_strided(out_ch, in_ch, k):
        scale = np.sqrt(2.0 / (in_ch * k * k))
        w = rng.normal(0.0, scale, size=(out_ch, in_ch, k, k))
        return netcore.conv2d(out_ch, in_ch, k, stride=2, padding=1, weight=w)

    head_w = rng.normal(0.0, np.sqrt(1.0 / 64), size=(class_count, 64))
    layers = [
        he(8, 3, 3), netcore.relu(),             # 0,1   64x64
        he_strided(16, 8, 3), netcore.relu(),    # 2,3   32x32
        he_strided(16, 16, 3), netcore.relu(),   # 4,5   16x16  tap
        he_strided(32, 16, 3), netcore.relu(),   # 6,7   8x8    tap
        he(32, 32, 3), netcore.relu(),           # 8,9   8x8    tap
        he_strided(64, 32, 3), netcore.relu(),   # 10,11 4x4    tap
        netcore.global_average_pool(),           # 12
        netcore.dense(class_count, 64, weight=head_w),  # 13
    ]
    return LayeredModel(input_shape=(3, IMAGE_SIZE, IMAGE_SIZE), layers=layers,
                        class_count=class_count, tap_layers=(5, 7, 9, 11))


def _quantize_f32(model: LayeredModel):
    # snap weights to float32-representable values so saved and in-memory
    # models evaluate identically
    for spec in model.layers:
        if spec.weight is not None:
            spec.weight = spec.weight.astype(np.float32).astype(np.float64)
            spec.bias = spec.bias.astype(np.float32).astype(np.float64)


def accuracy(model: LayeredModel, images: np.ndarray, labels: np.ndarray) -> float:
    logits = netcore.forward_batch(model, images)
    return float(np.mean(logits.argmax(axis=1) == labels))


def train_toy_cnn(dataset: list[SyntheticScene], seed: int,
                  recipe: TrainRecipe | None = None) -> LayeredModel:
    """Plain SGD with cross-entropy; deterministic for a fixed seed."""
    if not dataset:
        raise InvalidInputError("dataset is empty")
    recipe = recipe or TrainRecipe()
    labels = np.array([s.label for s in dataset], dtype=np.int64)
    images = np.stack([s.image for s in dataset])
    class_count = int(labels.max()) + 1
    model = build_toy_cnn(seed, class_count)
    rng = np.random.default_rng([seed, 0x7E41])
    n = len(dataset)
    weighted = [i for i, spec in enumerate(model.layers) if spec.weight is not None]
    for _ in range(recipe.epochs):
        order = rng.permutation(n)
        for start in range(0, n, recipe.batch_size):
            batch = order[start:start + recipe.batch_size]
            loss, _, grads = netcore.backprop_weights(model, images[batch], labels[batch])
            if not np.isfinite(loss):
                raise TrainingFailure(f"loss diverged to {loss}")
            for i in weighted:
                gw, gb = grads[i]
                model.layers[i].weight = model.layers[i].weight - recipe.lr * gw
                model.layers[i].bias = model.layers[i].bias - recipe.lr * gb
    _quantize_f32(model)
    acc = accuracy(model, images, labels)
    if acc < recipe.min_accuracy:
        raise TrainingFailure(
            f"train accuracy {acc:.3f} below {recipe.min_accuracy} "
            f"(classes={class_count}, scenes={n}, epochs={recipe.epochs}, lr={recipe.lr})")
    return model


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_dataset(dataset: list[SyntheticScene], directory: str | Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i, scene in enumerate(dataset):
        name = f"scene_{i:05d}.png"
        img = formats.float_to_image(scene.image)
        (directory / name).write_bytes(formats.encode_image(img))
        entries[name] = {
            "class": scene.label,
            "shape": scene.shape,
            "color": scene.color,
            "texture": scene.texture,
            "mask_rle": formats.mask_to_rle(scene.mask),
        }
    (directory / "labels.json").write_bytes(formats.canonical_json(entries))


def load_dataset(directory: str | Path) -> list[SyntheticScene]:
    directory = Path(directory)
    entries = json.loads((directory / "labels.json").read_bytes())
    scenes = []
    for name in sorted(entries):
        meta = entries[name]
        img = formats.decode_image((directory / name).read_bytes())
        scenes.append(SyntheticScene(
            image=formats.image_to_float(img),
            label=meta["class"], shape=meta["shape"], color=meta["color"],
            texture=meta["texture"],
            mask=formats.rle_to_mask(meta["mask_rle"], (IMAGE_SIZE, IMAGE_SIZE))))
    return scenes
