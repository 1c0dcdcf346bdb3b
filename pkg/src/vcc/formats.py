"""Bit-exact file formats: images, model manifests, dataset manifests, VCC JSON, DOT.

All JSON written here is canonical (sorted keys, no whitespace, shortest
round-trip floats) so identical objects serialize to identical bytes.
Weight payloads live in a little-endian float32 sidecar blob.
"""

from __future__ import annotations

import hashlib
import io as _io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import netcore
from .errors import InvalidInputError
from .netcore import LayeredModel, LayerSpec

MODEL_FORMAT = "vcc-model/1"


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

@dataclass
class ImageFile:
    """8-bit RGB raster; pixels are (H, W, 3) uint8."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise InvalidInputError(
                f"pixel array {self.pixels.shape} does not match {self.height}x{self.width}x3")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image dimensions must be >= 1")


def decode_image(data: bytes) -> ImageFile:
    """Decode PNG (8-bit RGB/RGBA, alpha dropped) or binary PPM (P6, maxval 255)."""
    if data[:2] == b"P6":
        return _decode_ppm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        img = Image.open(_io.BytesIO(data))
        if img.mode not in ("RGB", "RGBA"):
            raise InvalidInputError(f"unsupported PNG mode {img.mode}")
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        return ImageFile(width=arr.shape[1], height=arr.shape[0], pixels=arr)
    raise InvalidInputError("not a PNG or P6 PPM stream")


def _decode_ppm(data: bytes) -> ImageFile:
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments; a single whitespace byte separates header and raster
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P6" or maxval != 255:
        raise InvalidInputError("only P6 with maxval 255 is supported")
    raster = data[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise InvalidInputError("truncated PPM raster")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return ImageFile(width=w, height=h, pixels=pixels)


def encode_image(image: ImageFile, fmt: str = "png") -> bytes:
    if fmt == "ppm":
        header = f"P6\n{image.width} {image.height}\n255\n".encode()
        return header + image.pixels.tobytes()
    if fmt == "png":
        buf = _io.BytesIO()
        Image.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()
    raise InvalidInputError(f"unsupported format {fmt!r}")


def image_to_float(image: ImageFile) -> np.ndarray:
    """(3, H, W) float in [0, 1]."""
    return image.pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def float_to_image(tensor: np.ndarray) -> ImageFile:
    arr = np.clip(np.asarray(tensor, dtype=np.float64), 0.0, 1.0)
    pixels = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    return ImageFile(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def canonical_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n").encode()


# ---------------------------------------------------------------------------
# model manifest + weight blob
# ---------------------------------------------------------------------------

def _layer_entry(spec: LayerSpec, offset: int) -> tuple[dict, bytes, int]:
    entry: dict = {"kind": spec.kind}
    blob = b""
    if spec.kind == "conv2d":
        entry.update(kernel=spec.kernel, stride=spec.stride, padding=spec.padding,
                     in_ch=spec.in_ch, out_ch=spec.out_ch)
    elif spec.kind == "maxpool2d":
        entry.update(kernel=spec.kernel, stride=spec.stride)
    elif spec.kind == "dense":
        entry.update(in_dim=spec.in_dim, out_dim=spec.out_dim)
    if spec.weight is not None:
        wb = spec.weight.astype("<f4").tobytes()
        bb = spec.bias.astype("<f4").tobytes()
        entry["weight_offset"] = offset
        entry["weight_len"] = len(wb)
        entry["bias_offset"] = offset + len(wb)
        entry["bias_len"] = len(bb)
        blob = wb + bb
    return entry, blob, offset + len(blob)


def model_to_manifest(model: LayeredModel, include_weights: bool = True) -> tuple[dict, bytes]:
    """Manifest dict plus weight blob; architecture-only when include_weights is off."""
    layers = []
    blob = b""
    offset = 0
    for spec in model.layers:
        if include_weights:
            entry, chunk, offset = _layer_entry(spec, offset)
            blob += chunk
        else:
            entry, _, _ = _layer_entry(LayerSpec(
                spec.kind, kernel=spec.kernel, stride=spec.stride,
                padding=spec.padding, in_ch=spec.in_ch, out_ch=spec.out_ch,
                in_dim=spec.in_dim, out_dim=spec.out_dim), 0)
        layers.append(entry)
    manifest = {
        "format": MODEL_FORMAT,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "tap_layers": list(model.tap_layers),
        "layers": layers,
    }
    return manifest, blob


def model_from_manifest(manifest: dict, blob: bytes = b"") -> LayeredModel:
    if manifest.get("format") != MODEL_FORMAT:
        raise InvalidInputError(f"unknown model format {manifest.get('format')!r}")
    specs = []
    for entry in manifest["layers"]:
        kind = entry["kind"]
        weight = bias = None
        if "weight_offset" in entry:
            wo, wl = entry["weight_offset"], entry["weight_len"]
            bo, bl = entry["bias_offset"], entry["bias_len"]
            weight = np.frombuffer(blob[wo:wo + wl], dtype="<f4").astype(np.float64)
            bias = np.frombuffer(blob[bo:bo + bl], dtype="<f4").astype(np.float64)
        if kind == "conv2d":
            specs.append(netcore.conv2d(entry["out_ch"], entry["in_ch"], entry["kernel"],
                                        entry["stride"], entry["padding"], weight, bias))
        elif kind == "relu":
            specs.append(netcore.relu())
        elif kind == "maxpool2d":
            specs.append(netcore.maxpool2d(entry["kernel"], entry["stride"]))
        elif kind == "dense":
            specs.append(netcore.dense(entry["out_dim"], entry["in_dim"], weight, bias))
        elif kind == "flatten":
            specs.append(netcore.flatten())
        elif kind == "global-average-pool":
            specs.append(netcore.global_average_pool())
        else:
            raise InvalidInputError(f"unknown layer kind {kind!r}")
    return LayeredModel(
        input_shape=tuple(manifest["input_shape"]),
        layers=specs,
        class_count=manifest["class_count"],
        tap_layers=tuple(manifest["tap_layers"]),
    )


def save_model(model: LayeredModel, manifest_path: str | Path):
    manifest_path = Path(manifest_path)
    manifest, blob = model_to_manifest(model)
    weights_path = manifest_path.with_suffix(".bin")
    if blob:
        manifest["weights_file"] = weights_path.name
        weights_path.write_bytes(blob)
    manifest_path.write_bytes(canonical_json(manifest))


def load_model(manifest_path: str | Path) -> LayeredModel:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_bytes())
    blob = b""
    if "weights_file" in manifest:
        blob = (manifest_path.parent / manifest["weights_file"]).read_bytes()
    return model_from_manifest(manifest, blob)


def model_hash(model: LayeredModel) -> str:
    manifest, blob = model_to_manifest(model)
    h = hashlib.sha256()
    h.update(canonical_json(manifest))
    h.update(blob)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# masks (run-length encoding over the flat row-major grid)
# ---------------------------------------------------------------------------

def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Alternating run lengths, starting with the number of leading zeros."""
    flat = np.asarray(mask).ravel().astype(bool)
    runs = []
    current, count = False, 0
    for v in flat:
        if v == current:
            count += 1
        else:
            runs.append(count)
            current, count = v, 1
    runs.append(count)
    return runs


def rle_to_mask(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    pos, value = 0, False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != flat.size:
        raise InvalidInputError("run lengths do not cover the mask grid")
    return flat.reshape(shape)


# ---------------------------------------------------------------------------
# VCC JSON + DOT export
# ---------------------------------------------------------------------------

def write_vcc_json(graph, path: str | Path | None = None) -> bytes:
    data = canonical_json(graph.to_dict())
    if path is not None:
        Path(path).write_bytes(data)
    return data


def read_vcc_json(source: str | Path | bytes):
    from .graph import VCCGraph  # local import: graph depends on lower layers only
    if isinstance(source, (str, Path)):
        source = Path(source).read_bytes()
    return VCCGraph.from_dict(json.loads(source))


def export_dot(graph) -> str:
    """One rank per layer, edge pen width proportional to weight, class node as sink."""
    lines = ["digraph vcc {", "  rankdir=BT;", '  node [shape=box, style=rounded];']
    for layer in graph.layers:
        names = " ".join(f'"{c.concept_id}";' for c in layer.concepts)
        lines.append(f"  {{ rank=same; {names} }}")
    lines.append(f'  "class:{graph.class_label}" [shape=doublecircle];')
    for e in graph.edges:
        lines.append(
            f'  "{e.src}" -> "{e.dst}" [penwidth={1.0 + 4.0 * e.weight:.3f}, '
            f'label="{e.weight:.2f}"];')
    for e in graph.class_edges:
        lines.append(
            f'  "{e.src}" -> "class:{graph.class_label}" '
            f'[penwidth={1.0 + 4.0 * e.weight:.3f}, label="{e.weight:.2f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
