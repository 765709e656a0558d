"""Bit-exact frame codec for the split-training link.

Frame::

    b"SLPC" | version u16 | kind u8 | flags u8 | payload_len u32 | payload | crc32(payload) u32

All integers little-endian. A tensor inside a payload is
``rank u8 | dims u32... | float32 data``.

Payloads by kind:

* DataBatch: epoch u32 | batch_id u32 | count u32 | indices u32[count] | tensor Y.
  Flag bit 0 marks an evaluation batch (no feedback expected).
* Feedback: epoch u32 | batch_id u32 | tensor grad_y | tensor y
* EncoderParams: a parameter blob (see :mod:`semcom.nn.serialize`)
* Control: code u8 | epoch u32
* MetricsReport: epoch u32 | UTF-8 JSON object
"""

import enum
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from ..errors import ProtocolError

MAGIC = b"SLPC"
VERSION = 1
HEADER = struct.Struct("<4sHBBI")
CRC = struct.Struct("<I")
MAX_PAYLOAD = 1 << 30

FLAG_EVAL = 0x01


class Kind(enum.IntEnum):
    DATA_BATCH = 1
    FEEDBACK = 2
    ENCODER_PARAMS = 3
    CONTROL = 4
    METRICS_REPORT = 5


class ControlCode(enum.IntEnum):
    START = 1
    STOP_EPOCH = 2
    SHUTDOWN = 3


class _Message:
    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                a, b = np.asarray(a), np.asarray(b)
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True


@dataclass(eq=False)
class DataBatch(_Message):
    epoch: int
    batch_id: int
    indices: np.ndarray
    y: np.ndarray
    eval: bool = False
    kind = Kind.DATA_BATCH


@dataclass(eq=False)
class Feedback(_Message):
    epoch: int
    batch_id: int
    grad_y: np.ndarray
    y: np.ndarray
    kind = Kind.FEEDBACK

    def __post_init__(self):
        if np.shape(self.grad_y) != np.shape(self.y):
            raise ProtocolError(f"grad_y {np.shape(self.grad_y)} and y {np.shape(self.y)} differ in shape")


@dataclass(eq=False)
class EncoderParams(_Message):
    blob: bytes
    kind = Kind.ENCODER_PARAMS


@dataclass(eq=False)
class Control(_Message):
    code: ControlCode
    epoch: int = 0
    kind = Kind.CONTROL


@dataclass(eq=False)
class MetricsReport(_Message):
    epoch: int
    metrics: dict = field(default_factory=dict)
    kind = Kind.METRICS_REPORT


# ---------------------------------------------------------------- tensors


def to_f32(arr):
    """The values a tensor takes after one trip over the wire."""
    return np.asarray(arr, dtype=np.float64).astype("<f4").astype(np.float64)


def pack_tensor(arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim > 255:
        raise ProtocolError("tensor rank too large")
    if not np.all(np.isfinite(arr)):
        raise ProtocolError("refusing to send non-finite tensor")
    return struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape) + arr.astype("<f4").tobytes()


def unpack_tensor(buf, pos):
    if pos + 1 > len(buf):
        raise ProtocolError("truncated tensor header")
    rank = buf[pos]
    pos += 1
    end = pos + 4 * rank
    if end > len(buf):
        raise ProtocolError("truncated tensor dims")
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos = end
    count = math.prod(dims)
    end = pos + 4 * count
    if end > len(buf):
        raise ProtocolError("truncated tensor data")
    data = np.frombuffer(bytes(buf[pos:end]), dtype="<f4").astype(np.float64).reshape(dims)
    return data, end


# ---------------------------------------------------------------- payloads


def _payload(msg):
    if isinstance(msg, DataBatch):
        idx = np.asarray(msg.indices, dtype=np.int64).reshape(-1)
        if np.any(idx < 0) or np.any(idx > 0xFFFFFFFF):
            raise ProtocolError("sample index out of u32 range")
        return (struct.pack("<III", msg.epoch, msg.batch_id, idx.size) + idx.astype("<u4").tobytes()
                + pack_tensor(msg.y)), FLAG_EVAL if msg.eval else 0
    if isinstance(msg, Feedback):
        return struct.pack("<II", msg.epoch, msg.batch_id) + pack_tensor(msg.grad_y) + pack_tensor(msg.y), 0
    if isinstance(msg, EncoderParams):
        return bytes(msg.blob), 0
    if isinstance(msg, Control):
        return struct.pack("<BI", int(msg.code), msg.epoch), 0
    if isinstance(msg, MetricsReport):
        body = json.dumps(msg.metrics, sort_keys=True, allow_nan=True).encode("utf-8")
        return struct.pack("<I", msg.epoch) + body, 0
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def _parse(kind, flags, buf):
    try:
        kind = Kind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind}") from None
    try:
        if kind is Kind.DATA_BATCH:
            epoch, batch_id, count = struct.unpack_from("<III", buf, 0)
            pos = 12 + 4 * count
            if pos > len(buf):
                raise ProtocolError("truncated index list")
            indices = np.frombuffer(bytes(buf[12:pos]), dtype="<u4").astype(np.int64)
            y, pos = unpack_tensor(buf, pos)
            msg = DataBatch(epoch, batch_id, indices, y, bool(flags & FLAG_EVAL))
        elif kind is Kind.FEEDBACK:
            epoch, batch_id = struct.unpack_from("<II", buf, 0)
            grad_y, pos = unpack_tensor(buf, 8)
            y, pos = unpack_tensor(buf, pos)
            msg = Feedback(epoch, batch_id, grad_y, y)
        elif kind is Kind.ENCODER_PARAMS:
            msg, pos = EncoderParams(bytes(buf)), len(buf)
        elif kind is Kind.CONTROL:
            code, epoch = struct.unpack_from("<BI", buf, 0)
            msg, pos = Control(ControlCode(code), epoch), 5
        else:
            (epoch,) = struct.unpack_from("<I", buf, 0)
            msg, pos = MetricsReport(epoch, json.loads(bytes(buf[4:]).decode("utf-8"))), len(buf)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed {kind.name} payload: {exc}") from None
    if pos != len(buf):
        raise ProtocolError(f"{len(buf) - pos} trailing bytes in {kind.name} payload")
    return msg


# ---------------------------------------------------------------- frames


def encode_frame(msg):
    payload, flags = _payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError("payload too large")
    return HEADER.pack(MAGIC, VERSION, int(msg.kind), flags, len(payload)) + payload + CRC.pack(zlib.crc32(payload))


def parse_header(head):
    magic, version, kind, flags, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} exceeds limit")
    return kind, flags, length


def decode_frame(buf):
    """Decode one frame from the start of ``buf``; returns ``(message, bytes_consumed)``."""
    if len(buf) < HEADER.size:
        raise ProtocolError("truncated frame header")
    kind, flags, length = parse_header(bytes(buf[:HEADER.size]))
    end = HEADER.size + length
    if len(buf) < end + CRC.size:
        raise ProtocolError("truncated frame")
    payload = bytes(buf[HEADER.size:end])
    (crc,) = CRC.unpack(bytes(buf[end:end + CRC.size]))
    if crc != zlib.crc32(payload):
        raise ProtocolError("CRC mismatch")
    return _parse(kind, flags, payload), end + CRC.size


def read_frame(stream):
    """Read exactly one frame from a transport exposing ``recv_exact(n)``."""
    kind, flags, length = parse_header(stream.recv_exact(HEADER.size))
    payload = stream.recv_exact(length)
    (crc,) = CRC.unpack(stream.recv_exact(CRC.size))
    if crc != zlib.crc32(payload):
        raise ProtocolError("CRC mismatch")
    return _parse(kind, flags, payload)


def write_frame(stream, msg):
    stream.send_bytes(encode_frame(msg))
