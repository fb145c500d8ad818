"""Little-endian ``NDN1`` checkpoint container.

::

    magic "NDN1" | version u16 | meta length u32 | meta (UTF-8 JSON) | layer count u32
    per layer:  kind tag u8 | n_hyper u8 | hyper i32 x n_hyper | n_tensors u8
    per tensor: dtype u8 (0 = f32, 1 = f64) | ndim u8 | dims u32 x ndim | raw data

The JSON block carries whatever the caller needs to rebuild its object graph
(architecture, stack boundaries, training history).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .layers import (
    Concat,
    Conv1D,
    Dense,
    Flatten,
    Linear,
    MaxPool1D,
    ReLU,
    Reshape,
    Sigmoid,
    UpSample1D,
)

__all__ = ["save_layers", "load_layers", "CheckpointError"]

MAGIC = b"NDN1"
VERSION = 1

_TAGS = {
    "conv1d": 0,
    "maxpool1d": 1,
    "upsample1d": 2,
    "dense": 3,
    "relu": 4,
    "sigmoid": 5,
    "linear": 6,
    "flatten": 7,
    "reshape": 8,
    "concat": 9,
}
_KINDS = {v: k for k, v in _TAGS.items()}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def _build(kind, hyper, dtype):
    if kind == "conv1d":
        cin, cout, k, input_grad = hyper
        return Conv1D(cin, cout, k, dtype=dtype, input_grad=bool(input_grad))
    if kind == "dense":
        return Dense(*hyper, dtype=dtype)
    if kind == "maxpool1d":
        return MaxPool1D(*hyper)
    if kind == "upsample1d":
        return UpSample1D(*hyper)
    if kind == "reshape":
        return Reshape(*hyper)
    return {"relu": ReLU, "sigmoid": Sigmoid, "linear": Linear, "flatten": Flatten, "concat": Concat}[kind]()


def save_layers(path, layers, meta=None):
    out = bytearray()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    out += struct.pack("<4sHI", MAGIC, VERSION, len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(layers))
    for layer in layers:
        hyper = layer.hyper()
        out += struct.pack("<BB", _TAGS[layer.kind], len(hyper))
        out += struct.pack(f"<{len(hyper)}i", *hyper)
        out += struct.pack("<B", len(layer.params))
        for p in layer.params:
            code = 0 if p.dtype == np.float32 else 1
            out += struct.pack("<BB", code, p.ndim)
            out += struct.pack(f"<{p.ndim}I", *p.shape)
            out += np.ascontiguousarray(p, dtype=_DTYPES[code]).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(out))
    return path


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        values = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return values

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk


def load_layers(path):
    """Return ``(layers, meta)`` from a checkpoint written by :func:`save_layers`."""
    r = _Reader(Path(path).read_bytes())
    magic, version, meta_len = r.unpack("<4sHI")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta = json.loads(r.take(meta_len).decode()) if meta_len else {}
    (count,) = r.unpack("<I")
    layers = []
    for _ in range(count):
        tag, n_hyper = r.unpack("<BB")
        if tag not in _KINDS:
            raise CheckpointError(f"unknown layer tag {tag}")
        hyper = r.unpack(f"<{n_hyper}i")
        (n_tensors,) = r.unpack("<B")
        tensors = []
        for _ in range(n_tensors):
            code, ndim = r.unpack("<BB")
            dims = r.unpack(f"<{ndim}I")
            dtype = _DTYPES[code]
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(dims)
            tensors.append(data.astype(dtype.newbyteorder("="), copy=True))
        dtype = tensors[0].dtype if tensors else np.float32
        layer = _build(_KINDS[tag], hyper, dtype)
        if len(tensors) != len(layer.params):
            raise CheckpointError(f"{layer!r}: expected {len(layer.params)} tensors, got {len(tensors)}")
        for p, t in zip(layer.params, tensors):
            if p.shape != t.shape:
                raise CheckpointError(f"{layer!r}: tensor shape {t.shape} != {p.shape}")
            p[...] = t
        layers.append(layer)
    if r.pos != len(r.raw):
        raise CheckpointError("trailing bytes after last layer")
    return layers, meta
