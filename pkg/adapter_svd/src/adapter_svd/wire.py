"""Server-side codec for the tensor wire protocol, version 1.

Frames are a 15-byte header (magic "NVSW", u16 version, u8 opcode, u64
payload length, all little-endian) followed by the payload. Tensors travel
as rank u8, rank x u32 dims, dtype tag u8 (0 = f32), then row-major f32
bytes. Request payloads open with seq u64, sigma f64, and a flags byte whose
bit 0 announces a trailing conditioning tensor.

This module is written against the published byte layout, not against the
solver's client library; the adapter has no runtime dependency on it.
Decoding is strict: any truncation, trailing bytes, unknown dtype, or
oversize declaration raises FrameError without yielding a partial value.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "MAGIC",
    "PROTOCOL_VERSION",
    "HEADER_LEN",
    "PAYLOAD_LIMIT",
    "OP_HELLO",
    "OP_DENOISE",
    "OP_VJP",
    "OP_RESULT",
    "OP_ERROR",
    "FrameError",
    "DenoiseRequest",
    "VjpRequest",
    "pack_frame",
    "read_header",
    "parse_client_hello",
    "server_hello_payload",
    "error_payload",
    "result_payload",
    "parse_denoise_request",
    "parse_vjp_request",
]

MAGIC = b"NVSW"
PROTOCOL_VERSION = 1
HEADER_LEN = 15
PAYLOAD_LIMIT = 1 << 30

OP_HELLO = 0
OP_DENOISE = 1
OP_VJP = 2
OP_RESULT = 3
OP_ERROR = 4

_DTYPE_F32 = 0
_COND_FLAG = 0x01

_HEADER_FMT = struct.Struct("<4sHBQ")
_SEQ_SIGMA_FLAGS = struct.Struct("<QdB")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class FrameError(Exception):
    """The byte stream does not follow the wire format."""


def pack_frame(opcode: int, payload: bytes) -> bytes:
    if len(payload) > PAYLOAD_LIMIT:
        raise FrameError(f"payload of {len(payload)} bytes exceeds {PAYLOAD_LIMIT}")
    return _HEADER_FMT.pack(MAGIC, PROTOCOL_VERSION, opcode, len(payload)) + payload


def read_header(header: bytes) -> tuple[int, int, int]:
    """Split a header into (version, opcode, payload length).

    Magic and the payload ceiling are checked here; version and opcode
    policy belongs to the serving loop.
    """
    if len(header) != HEADER_LEN:
        raise FrameError(f"header needs {HEADER_LEN} bytes, got {len(header)}")
    magic, version, opcode, length = _HEADER_FMT.unpack(header)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if length > PAYLOAD_LIMIT:
        raise FrameError(f"declared payload of {length} bytes exceeds {PAYLOAD_LIMIT}")
    return version, opcode, length


class _Cursor:
    """Bounds-checked reader over one payload."""

    def __init__(self, payload: bytes) -> None:
        self._buf = payload
        self._at = 0

    def grab(self, count: int) -> bytes:
        end = self._at + count
        if count < 0 or end > len(self._buf):
            raise FrameError(
                f"payload ends {end - len(self._buf)} bytes short at offset {self._at}"
            )
        chunk = self._buf[self._at : end]
        self._at = end
        return chunk

    def tensor(self) -> np.ndarray:
        rank = self.grab(1)[0]
        dims = tuple(_U32.unpack(self.grab(4))[0] for _ in range(rank))
        count = 1
        for d in dims:
            count *= d
        if count * 4 > PAYLOAD_LIMIT:
            raise FrameError(f"tensor of {count} elements exceeds the payload ceiling")
        dtype_tag = self.grab(1)[0]
        if dtype_tag != _DTYPE_F32:
            raise FrameError(f"unknown dtype tag {dtype_tag}")
        raw = self.grab(count * 4)
        return np.frombuffer(raw, dtype="<f4").reshape(dims)

    def done(self) -> None:
        if self._at != len(self._buf):
            raise FrameError(f"{len(self._buf) - self._at} trailing bytes in payload")


def _tensor_bytes(values: np.ndarray) -> bytes:
    # ascontiguousarray would promote rank 0 to rank 1; asarray keeps it.
    values = np.asarray(values, dtype="<f4", order="C")
    if values.ndim > 0xFF:
        raise FrameError(f"rank {values.ndim} does not fit u8")
    header = bytes([values.ndim])
    for d in values.shape:
        if d > 0xFFFFFFFF:
            raise FrameError(f"dimension {d} does not fit u32")
        header += _U32.pack(d)
    return header + bytes([_DTYPE_F32]) + values.tobytes(order="C")


def parse_client_hello(payload: bytes) -> None:
    """Accept a client HELLO; anything else raises FrameError."""
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FrameError(f"HELLO payload is not valid JSON: {err}") from err
    if not isinstance(doc, dict) or doc.get("role") != "client":
        raise FrameError(f"expected a client HELLO, got {doc!r}")


def server_hello_payload(
    frame_count: int, channels: int, supports_vjp: bool, latent_space_id: str
) -> bytes:
    doc = {
        "role": "server",
        "capabilities": {
            "supports_vjp": supports_vjp,
            "frame_count": frame_count,
            "channels": channels,
            "latent_space_id": latent_space_id,
        },
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def error_payload(seq: int, message: str) -> bytes:
    return _U64.pack(seq) + message.encode("utf-8")


def result_payload(seq: int, values: np.ndarray) -> bytes:
    return _U64.pack(seq) + _tensor_bytes(values)


@dataclass(frozen=True)
class DenoiseRequest:
    seq: int
    sigma: float
    latent: np.ndarray
    conditioning: Optional[np.ndarray]


@dataclass(frozen=True)
class VjpRequest:
    seq: int
    sigma: float
    latent: np.ndarray
    cotangent: np.ndarray
    conditioning: Optional[np.ndarray]


def _request_head(cursor: _Cursor) -> tuple[int, float, bool]:
    seq, sigma, flags = _SEQ_SIGMA_FLAGS.unpack(cursor.grab(_SEQ_SIGMA_FLAGS.size))
    if flags & ~_COND_FLAG:
        raise FrameError(f"unknown flag bits 0x{flags:02x}")
    return seq, sigma, bool(flags & _COND_FLAG)


def parse_denoise_request(payload: bytes) -> DenoiseRequest:
    cursor = _Cursor(payload)
    seq, sigma, has_cond = _request_head(cursor)
    latent = cursor.tensor()
    conditioning = cursor.tensor() if has_cond else None
    cursor.done()
    return DenoiseRequest(seq=seq, sigma=sigma, latent=latent, conditioning=conditioning)


def parse_vjp_request(payload: bytes) -> VjpRequest:
    cursor = _Cursor(payload)
    seq, sigma, has_cond = _request_head(cursor)
    latent = cursor.tensor()
    cotangent = cursor.tensor()
    conditioning = cursor.tensor() if has_cond else None
    cursor.done()
    return VjpRequest(
        seq=seq, sigma=sigma, latent=latent, cotangent=cotangent, conditioning=conditioning
    )
