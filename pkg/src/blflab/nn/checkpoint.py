"""Model checkpoint file: magic string, JSON header, raw parameter blocks.

Layout:  b"BLFLAB1\\n" | uint32 BE header length | UTF-8 JSON header |
         parameter arrays as little-endian float64 in header order.
The header carries layer specs, hook kind, gamma mode and value, and the
shape of every array, so a file is self-describing.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..activations import BoundedFn
from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU
from .model import Model

MAGIC = b"BLFLAB1\n"

_LAYER_BUILDERS = {
    "Dense": lambda s: Dense(s["fan_in"], s["fan_out"]),
    "Conv2D": lambda s: Conv2D(s["cin"], s["cout"], s["kh"], s["kw"], s["stride"], s["padding"]),
    "ReLU": lambda s: ReLU(),
    "MaxPool2D": lambda s: MaxPool2D(s["k"], s["stride"]),
    "Flatten": lambda s: Flatten(),
    "Dropout": lambda s: Dropout(s["rate"]),
}


def serialize_model(model: Model) -> bytes:
    arrays = []
    for li, layer in enumerate(model.layers):
        for pi, p in enumerate(layer.params):
            arrays.append({"layer": li, "index": pi, "shape": list(p.shape)})
    header = {
        "layers": [layer.spec() for layer in model.layers],
        "hook": model.hook.kind,
        "gamma_mode": "learnable" if model.learnable_gamma else "fixed",
        "gamma": model.gamma_tilde if model.learnable_gamma else model.hook.gamma,
        "arrays": arrays,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack(">I", len(blob)))
    out.write(blob)
    for li, layer in enumerate(model.layers):
        for p in layer.params:
            out.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return out.getvalue()


def deserialize_model(data: bytes) -> Model:
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not a model checkpoint: bad magic string")
    offset = len(MAGIC)
    (header_len,) = struct.unpack(">I", data[offset : offset + 4])
    offset += 4
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    layers = []
    for spec in header["layers"]:
        builder = _LAYER_BUILDERS.get(spec["kind"])
        if builder is None:
            raise ValueError(f"unknown layer kind {spec['kind']!r} in checkpoint")
        layers.append(builder(spec))

    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        target = layers[entry["layer"]].params[entry["index"]]
        if target.shape != shape:
            raise ValueError("checkpoint array shape mismatch")
        target[...] = block

    if header["gamma_mode"] == "learnable":
        return Model(
            layers,
            hook=BoundedFn(header["hook"]),
            learnable_gamma=True,
            gamma_tilde=header["gamma"],
        )
    return Model(layers, hook=BoundedFn(header["hook"], gamma=header["gamma"]))


def save_model(model: Model, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
