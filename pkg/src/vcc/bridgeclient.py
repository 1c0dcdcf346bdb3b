"""Client for an out-of-process model oracle.

The bridge speaks newline-delimited JSON over the child's stdin/stdout,
one request per line, with tensors as base64 little-endian float32 plus an
explicit shape. It exposes the same surface as the in-core oracle so the
pipeline can run against models hosted elsewhere.
"""

from __future__ import annotations

import base64
import json
import subprocess

import numpy as np

from .errors import BridgeError

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 256 * 1024 * 1024


def tensor_to_payload(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    data = arr.astype("<f4").tobytes()
    if len(data) > MAX_PAYLOAD:
        raise BridgeError(f"payload of {len(data)} bytes exceeds the 256 MiB limit")
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def payload_to_tensor(payload: dict) -> np.ndarray:
    data = base64.b64decode(payload["data"])
    shape = tuple(payload["shape"])
    expected = 4 * int(np.prod(shape)) if shape else 4
    if len(data) != expected:
        raise BridgeError(f"payload length {len(data)} does not match shape {shape}")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)


class BridgeOracle:
    """Model oracle backed by a subprocess speaking the NDJSON protocol."""

    def __init__(self, command: list[str]):
        self._proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        self._next_id = 0
        hello = self.request("hello")
        if hello.get("protocol") != PROTOCOL_VERSION:
            raise BridgeError(f"unsupported protocol {hello.get('protocol')!r}")
        self.input_shape = tuple(hello["input_shape"])
        self.tap_layers = tuple(hello["tap_layers"])
        self.class_count = int(hello["class_count"])
        self._shapes = {int(k): tuple(v)
                        for k, v in self.request("shapes")["shapes"].items()}

    def request(self, op: str, **fields) -> dict:
        if self._proc.poll() is not None:
            raise BridgeError("bridge process has exited")
        self._next_id += 1
        msg = {"id": self._next_id, "op": op, **fields}
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"bridge transport failed: {exc}") from exc
        if not line:
            raise BridgeError("bridge closed its output stream")
        reply = json.loads(line)
        if reply.get("id") != self._next_id:
            raise BridgeError(f"response id {reply.get('id')} != request id {self._next_id}")
        if reply.get("status") != "ok":
            raise BridgeError(f"bridge error: {reply.get('error', 'unknown')}")
        return reply

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # ---- oracle surface ---------------------------------------------------

    def layer_output_shape(self, layer: int) -> tuple:
        if layer not in self._shapes:
            raise BridgeError(f"bridge reports no layer {layer}")
        return self._shapes[layer]

    def forward_to(self, image: np.ndarray, layer: int) -> np.ndarray:
        reply = self.request("forward_to", layer=layer, tensor=tensor_to_payload(image))
        return payload_to_tensor(reply["tensor"])

    def forward_between(self, activation: np.ndarray, from_layer: int,
                        to_layer: int) -> np.ndarray:
        # to_layer -1 requests the final logits
        reply = self.request("forward_between", from_layer=from_layer,
                             to_layer=to_layer, tensor=tensor_to_payload(activation))
        return payload_to_tensor(reply["tensor"])

    def forward_full(self, image: np.ndarray) -> np.ndarray:
        reply = self.request("logits", tensor=tensor_to_payload(image))
        return payload_to_tensor(reply["tensor"])

    def distance_grad(self, activation: np.ndarray, from_layer: int, to_layer: int,
                      centroid: np.ndarray) -> np.ndarray:
        reply = self.request("distance_grad", from_layer=from_layer, to_layer=to_layer,
                             tensor=tensor_to_payload(activation),
                             centroid=tensor_to_payload(centroid))
        return payload_to_tensor(reply["tensor"])

    def logit_grad(self, activation: np.ndarray, from_layer: int,
                   class_index: int) -> np.ndarray:
        reply = self.request("logit_grad", from_layer=from_layer,
                             class_index=class_index, tensor=tensor_to_payload(activation))
        return payload_to_tensor(reply["tensor"])
