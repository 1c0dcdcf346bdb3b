"""Top-down feature-space segmentation.

Each tap layer's activations are clustered conditioned on the segment masks
of the layer above it (deepest layer first, conditioned on an all-ones
mask), producing a forest of binary masks per image and masked RGB segments
at full image resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import kmeans, silhouette_score
from .errors import InvalidInputError, UndefinedMetricError
from .oracle import as_oracle

DEFAULT_COMPACTNESS = 0.8
SILHOUETTE_FLOOR = 0.1
K_MIN = 2
K_MAX = 8


@dataclass
class BinaryMask:
    grid: np.ndarray               # bool, layer resolution
    image_id: int
    layer: int
    mask_id: str
    parent_id: str | None = None   # None marks a root at the deepest layer

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if not self.grid.any():
            raise InvalidInputError("mask has no active cells")


@dataclass
class SegmentRecord:
    mask: BinaryMask
    mask_full: np.ndarray          # bool, image resolution (upsampled)
    rgb: np.ndarray                # (3, H, W), zero outside mask_full
    segment_id: str


@dataclass
class SegmentSet:
    by_layer: dict[int, list[SegmentRecord]] = field(default_factory=dict)
    cluster_counts: dict[str, int] = field(default_factory=dict)  # parent id -> child count

    def segments(self, layer: int) -> list[SegmentRecord]:
        return self.by_layer.get(layer, [])

    def all_segments(self):
        for layer in sorted(self.by_layer):
            yield from self.by_layer[layer]


def bilinear_resize(arr: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Half-pixel-center bilinear interpolation of a (H, W) or (C, H, W) array."""
    arr = np.asarray(arr, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    c, h, w = arr.shape
    th, tw = target_hw
    ys = (np.arange(th) + 0.5) * h / th - 0.5
    xs = (np.arange(tw) + 0.5) * w / tw - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = arr[:, y0][:, :, x0] * (1 - fx) + arr[:, y0][:, :, x1] * fx
    bot = arr[:, y1][:, :, x0] * (1 - fx) + arr[:, y1][:, :, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out[0] if squeeze else out


def upsample_mask(grid: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear interpolation of the {0,1} field, thresholded at 0.5.

    Guaranteed nonempty for nonempty input: if thresholding empties the
    mask, the strongest interpolated cell is kept.
    """
    grid = np.asarray(grid, dtype=bool)
    if target_hw[0] < grid.shape[0] or target_hw[1] < grid.shape[1]:
        raise InvalidInputError(f"target {target_hw} smaller than source {grid.shape}")
    if target_hw == grid.shape:
        return grid.copy()
    interp = bilinear_resize(grid.astype(np.float64), target_hw)
    out = interp >= 0.5
    if not out.any() and grid.any():
        out.flat[np.argmax(interp)] = True
    return out


def choose_k_silhouette(points: np.ndarray, k_range, seed: int = 0) -> int:
    """argmax of mean silhouette over k_range; 1 on degenerate inputs.

    Falls back to 1 when fewer than 2*K_MIN points exist or the best mean
    silhouette stays below the floor.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise InvalidInputError("points must be a nonempty 2-D array")
    k_range = [k for k in k_range if 2 <= k <= len(points) - 1]
    if len(points) < 2 * K_MIN or not k_range:
        return 1
    best_k, best_score = 1, SILHOUETTE_FLOOR
    for k in k_range:
        _, assign = kmeans(points, k, seed)
        score = silhouette_score(points, assign)
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def mask_slic(features: np.ndarray, region: np.ndarray, k: int,
              compactness: float = DEFAULT_COMPACTNESS, seed: int = 0) -> list[np.ndarray]:
    """Cluster the active cells of `region` into k disjoint masks.

    Distance is l2 over per-position-normalized channel features
    concatenated with compactness-weighted normalized coordinates. Spatial
    connectivity of the output masks is not enforced.
    """
    features = np.asarray(features, dtype=np.float64)
    region = np.asarray(region, dtype=bool)
    if features.ndim != 3 or features.shape[1:] != region.shape:
        raise InvalidInputError(
            f"features {features.shape} do not sit on the region grid {region.shape}")
    if not region.any():
        raise InvalidInputError("region has no active cells")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    ys, xs = np.nonzero(region)
    k = min(k, len(ys))
    if k == 1:
        return [region.copy()]
    feats = features[:, ys, xs].T  # (cells, C)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    feats = feats / norms
    h, w = region.shape
    yy = ys / (h - 1) if h > 1 else np.zeros_like(ys, dtype=float)
    xx = xs / (w - 1) if w > 1 else np.zeros_like(xs, dtype=float)
    joint = np.hstack([feats, compactness * np.stack([yy, xx], axis=1)])
    _, assign = kmeans(joint, k, seed)
    masks = []
    for label in range(k):
        sel = assign == label
        if not sel.any():
            continue
        m = np.zeros_like(region)
        m[ys[sel], xs[sel]] = True
        masks.append(m)
    # stable order: by first active flat index
    masks.sort(key=lambda m: int(np.argmax(m.ravel())))
    return masks


def rgb_mask(image: np.ndarray, mask_full: np.ndarray) -> np.ndarray:
    """Elementwise product of a (3, H, W) image with an image-resolution mask."""
    image = np.asarray(image, dtype=np.float64)
    mask_full = np.asarray(mask_full, dtype=bool)
    if image.ndim != 3 or image.shape[1:] != mask_full.shape:
        raise InvalidInputError(
            f"mask resolution {mask_full.shape} does not match image {image.shape}")
    return image * mask_full[None, :, :]


def _min_cells(layer_hw: tuple[int, int]) -> int:
    return max(4, int(0.01 * layer_hw[0] * layer_hw[1]))


def topdown_segment(model, images: list[np.ndarray], tap_layers=None, seed: int = 0,
                    compactness: float = DEFAULT_COMPACTNESS) -> SegmentSet:
    """Recursive conditioned segmentation over all tap layers, deepest first."""
    oracle = as_oracle(model)
    if tap_layers is None:
        tap_layers = oracle.tap_layers
    taps = sorted(tap_layers)
    if not images:
        raise InvalidInputError("need at least one image")
    if not taps:
        raise InvalidInputError("need at least one tap layer")
    img_h, img_w = oracle.input_shape[1], oracle.input_shape[2]

    result = SegmentSet()
    for layer in taps:
        result.by_layer[layer] = []

    for img_idx, image in enumerate(images):
        feats = {layer: oracle.forward_to(image, layer) for layer in taps}
        # virtual root: all-ones conditioning at the deepest layer
        parents: list[BinaryMask | None] = [None]
        for depth_pos, layer in enumerate(reversed(taps)):
            z = feats[layer]
            layer_hw = z.shape[1:]
            min_cells = _min_cells(layer_hw)
            children: list[BinaryMask] = []
            for parent in parents:
                if parent is None:
                    region = np.ones(layer_hw, dtype=bool)
                    parent_id = None
                else:
                    region = upsample_mask(parent.grid, layer_hw)
                active = int(region.sum())
                pts = z[:, region].T
                k_hi = min(K_MAX, active // 9)
                k = choose_k_silhouette(pts, range(K_MIN, k_hi + 1),
                                        seed=_mask_seed(seed, img_idx, layer, parent)) \
                    if active >= 2 else 1
                masks = mask_slic(z, region, k, compactness,
                                  seed=_mask_seed(seed, img_idx, layer, parent) + 1)
                kept = [m for m in masks if int(m.sum()) >= min_cells]
                if not kept and masks:
                    # keep the largest so the parent always has a descendant
                    kept = [max(masks, key=lambda m: int(m.sum()))]
                parent_id = parent.mask_id if parent is not None else None
                if parent_id is not None:
                    result.cluster_counts[parent_id] = len(kept)
                for m in kept:
                    mask_id = f"i{img_idx:03d}_L{layer:02d}_m{len(result.by_layer[layer]):04d}"
                    bm = BinaryMask(grid=m, image_id=img_idx, layer=layer,
                                    mask_id=mask_id, parent_id=parent_id)
                    full = upsample_mask(m, (img_h, img_w))
                    record = SegmentRecord(mask=bm, mask_full=full,
                                           rgb=rgb_mask(image, full), segment_id=mask_id)
                    result.by_layer[layer].append(record)
                    children.append(bm)
            parents = children
    return result


def _mask_seed(seed: int, img_idx: int, layer: int, parent: BinaryMask | None) -> int:
    tag = 0 if parent is None else 1 + int(parent.mask_id.rsplit("m", 1)[1])
    return (seed * 1_000_003 + img_idx * 7919 + layer * 101 + tag) % (2 ** 31)


def relative_segment_size(segments: list[SegmentRecord]) -> float:
    """Mean ratio of active image-resolution pixels to total image pixels."""
    if not segments:
        raise UndefinedMetricError("no segments at this layer")
    ratios = [s.mask_full.mean() for s in segments]
    return float(np.mean(ratios))
