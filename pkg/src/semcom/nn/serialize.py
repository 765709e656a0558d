"""Flat binary parameter blobs.

Layout (all integers little-endian)::

    b"SLNN" | version u16 | input rank u8 | input dims u32...
    | layer count u32
    | per layer: kind u8 | hyper count u8 | hyper u32... | param count u8
    |            per param: rank u8 | dims u32... | f32 data

Parameters are stored as float32, so a load/save cycle is bit-exact only
after the first save.
"""

import struct
from pathlib import Path

import numpy as np

from ..errors import ProtocolError
from .layers import KINDS, Layer, Model
from .tensor import Tensor

MAGIC = b"SLNN"
VERSION = 1
_KIND_TAG = {k: i for i, k in enumerate(KINDS)}
_HYPER_KEYS = {
    "dense": ("in_dim", "out_dim"),
    "conv2d": ("in_ch", "out_ch", "kernel", "stride", "padding"),
}


def _hyper_values(layer):
    if layer.kind == "reshape":
        return list(layer.hyper["shape"])
    return [layer.hyper[k] for k in _HYPER_KEYS.get(layer.kind, ())]


def model_to_bytes(model):
    out = bytearray(MAGIC)
    out += struct.pack("<HB", VERSION, len(model.input_shape))
    out += struct.pack(f"<{len(model.input_shape)}I", *model.input_shape)
    out += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        hyper = _hyper_values(layer)
        out += struct.pack("<BB", _KIND_TAG[layer.kind], len(hyper))
        out += struct.pack(f"<{len(hyper)}I", *hyper)
        keys = sorted(layer.params)
        out += struct.pack("<B", len(keys))
        for key in keys:
            data = layer.params[key].data
            out += struct.pack("<B", data.ndim)
            out += struct.pack(f"<{data.ndim}I", *data.shape)
            out += data.astype("<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ProtocolError("parameter blob truncated")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n):
        if self.pos + n > len(self.buf):
            raise ProtocolError("parameter blob truncated")
        b = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return b


def model_from_bytes(blob, name="model"):
    r = _Reader(blob)
    if r.raw(4) != MAGIC:
        raise ProtocolError("bad parameter blob magic")
    version, rank = r.take("<HB")
    if version != VERSION:
        raise ProtocolError(f"unsupported parameter blob version {version}")
    input_shape = r.take(f"<{rank}I")
    (n_layers,) = r.take("<I")
    layers = []
    for _ in range(n_layers):
        tag, n_hyper = r.take("<BB")
        if tag >= len(KINDS):
            raise ProtocolError(f"unknown layer tag {tag}")
        kind = KINDS[tag]
        hyper_vals = r.take(f"<{n_hyper}I")
        if kind == "reshape":
            hyper = {"shape": tuple(hyper_vals)}
        else:
            hyper = dict(zip(_HYPER_KEYS.get(kind, ()), hyper_vals))
        (n_params,) = r.take("<B")
        params = {}
        keys = ("bias", "weight") if n_params == 2 else ()
        if n_params not in (0, 2):
            raise ProtocolError(f"unexpected parameter count {n_params}")
        for key in keys:
            (prank,) = r.take("<B")
            dims = r.take(f"<{prank}I")
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(r.raw(4 * count), dtype="<f4").astype(np.float64).reshape(dims)
            params[key] = Tensor(data, requires_grad=True)
        layers.append(Layer(kind, params, hyper))
    if r.pos != len(r.buf):
        raise ProtocolError("trailing bytes after parameter blob")
    return Model(layers, input_shape, name)


def save_model(model, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path, name=None):
    path = Path(path)
    return model_from_bytes(path.read_bytes(), name or path.stem)
