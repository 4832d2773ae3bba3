"""Binary framing for remote denoisers.

Every message is a 15-byte header followed by an opcode-specific payload:

    magic   4 bytes  "NVSW"
    version u16 LE   currently 1
    opcode  u8       HELLO=0 DENOISE=1 VJP=2 RESULT=3 ERROR=4
    length  u64 LE   payload byte count

Tensor payloads use one fixed frame layout:

    rank   u8
    dims   rank x u32 LE
    dtype  u8        f32=0 (the only dtype in version 1)
    data   row-major f32 LE, exactly prod(dims)*4 bytes

Payload layouts (all integers little-endian):

    HELLO    canonical JSON; the client sends {"role": "client"}, the server
             replies {"role": "server", "capabilities": {...}}
    DENOISE  seq u64 | sigma f64 | flags u8 | tensor [| conditioning tensor]
    VJP      seq u64 | sigma f64 | flags u8 | tensor | cotangent [| conditioning]
    RESULT   seq u64 | tensor
    ERROR    seq u64 (0 when unbound to a request) | UTF-8 message

flags bit0 marks a trailing conditioning tensor; all other bits must be zero.
Decoding is strict: short reads, trailing bytes, unknown dtypes, or length
mismatches raise ProtocolError and never produce a partial tensor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_SIZE",
    "MAX_PAYLOAD",
    "Opcode",
    "ProtocolError",
    "RemoteError",
    "TensorFrame",
    "Capabilities",
    "encode_message",
    "split_header",
    "encode_hello_client",
    "encode_hello_server",
    "parse_hello",
    "encode_denoise",
    "parse_denoise",
    "encode_vjp",
    "parse_vjp",
    "encode_result",
    "parse_result",
    "encode_error",
    "parse_error",
]

MAGIC = b"NVSW"
VERSION = 1
HEADER_SIZE = 15
# Hard ceiling on a single payload; also bounds decoded tensor size.
MAX_PAYLOAD = 1 << 30
_DTYPE_F32 = 0
_FLAG_CONDITIONING = 0x01

_HEADER = struct.Struct("<4sHBQ")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")
_U32 = struct.Struct("<I")


class Opcode(IntEnum):
    HELLO = 0
    DENOISE = 1
    VJP = 2
    RESULT = 3
    ERROR = 4


class ProtocolError(Exception):
    """The byte stream violates the wire format."""


class RemoteError(Exception):
    """The peer answered with an ERROR message."""

    def __init__(self, seq: int, message: str) -> None:
        super().__init__(f"remote error (seq {seq}): {message}")
        self.seq = seq
        self.message = message


@dataclass(frozen=True)
class TensorFrame:
    """A shaped f32 buffer as it travels on the wire."""

    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        data = np.ascontiguousarray(self.data, dtype="<f4")
        expected = 1
        for d in dims:
            if d < 0 or d > 0xFFFFFFFF:
                raise ProtocolError(f"dimension {d} does not fit u32")
            expected *= d
        if data.size != expected:
            raise ProtocolError(f"data has {data.size} elements, dims {dims} need {expected}")
        data = data.reshape(dims)
        data.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @staticmethod
    def from_array(array: np.ndarray) -> "TensorFrame":
        array = np.asarray(array)
        return TensorFrame(dims=array.shape, data=array.astype("<f4", copy=False))

    def to_array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64)

    def encode(self) -> bytes:
        rank = len(self.dims)
        if rank > 0xFF:
            raise ProtocolError(f"rank {rank} does not fit u8")
        parts = [bytes([rank])]
        for d in self.dims:
            parts.append(_U32.pack(d))
        parts.append(bytes([_DTYPE_F32]))
        parts.append(self.data.tobytes(order="C"))
        return b"".join(parts)


class _Reader:
    """Strict cursor over a payload; every read is bounds-checked."""

    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise ProtocolError(
                f"payload truncated: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def f64(self) -> float:
        return _F64.unpack(self.take(8))[0]

    def tensor(self) -> TensorFrame:
        rank = self.u8()
        dims = tuple(self.u32() for _ in range(rank))
        elements = 1
        for d in dims:
            elements *= d
        if elements * 4 > MAX_PAYLOAD:
            raise ProtocolError(f"tensor of {elements} elements exceeds the payload ceiling")
        dtype = self.u8()
        if dtype != _DTYPE_F32:
            raise ProtocolError(f"unsupported dtype tag {dtype}")
        raw = self.take(elements * 4)
        data = np.frombuffer(raw, dtype="<f4").reshape(dims)
        return TensorFrame(dims=dims, data=data)

    def remainder(self) -> bytes:
        out = self.buf[self.pos :]
        self.pos = len(self.buf)
        return out

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise ProtocolError(f"{len(self.buf) - self.pos} trailing bytes in payload")


def encode_message(opcode: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return _HEADER.pack(MAGIC, VERSION, opcode, len(payload)) + payload


def split_header(header: bytes) -> tuple[int, int, int]:
    """Parse a 15-byte header into (version, opcode, payload_len).

    Magic and length sanity are enforced here; version and opcode handling is
    the caller's policy (a server must answer a bad version with ERROR, and an
    unknown opcode with ERROR while keeping the connection).
    """
    if len(header) != HEADER_SIZE:
        raise ProtocolError(f"header must be {HEADER_SIZE} bytes, got {len(header)}")
    magic, version, opcode, length = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    return version, opcode, length


@dataclass(frozen=True)
class Capabilities:
    """What a wire server advertises in its HELLO reply."""

    supports_vjp: bool
    frame_count: int
    channels: int
    latent_space_id: str = "pixel"

    def to_dict(self) -> dict:
        return {
            "supports_vjp": self.supports_vjp,
            "frame_count": self.frame_count,
            "channels": self.channels,
            "latent_space_id": self.latent_space_id,
        }

    @staticmethod
    def from_dict(payload: dict) -> "Capabilities":
        try:
            supports_vjp = payload["supports_vjp"]
            frame_count = payload["frame_count"]
            channels = payload["channels"]
            latent_space_id = payload.get("latent_space_id", "pixel")
        except (KeyError, TypeError) as err:
            raise ProtocolError(f"capabilities missing field: {err}") from err
        if not isinstance(supports_vjp, bool):
            raise ProtocolError("supports_vjp must be a boolean")
        if not isinstance(frame_count, int) or frame_count < 0:
            raise ProtocolError("frame_count must be a nonnegative integer")
        if not isinstance(channels, int) or channels < 0:
            raise ProtocolError("channels must be a nonnegative integer")
        if not isinstance(latent_space_id, str):
            raise ProtocolError("latent_space_id must be a string")
        return Capabilities(
            supports_vjp=supports_vjp,
            frame_count=frame_count,
            channels=channels,
            latent_space_id=latent_space_id,
        )


def encode_hello_client() -> bytes:
    return json.dumps({"role": "client"}, sort_keys=True).encode("utf-8")


def encode_hello_server(caps: Capabilities) -> bytes:
    return json.dumps(
        {"role": "server", "capabilities": caps.to_dict()}, sort_keys=True
    ).encode("utf-8")


def parse_hello(payload: bytes) -> tuple[str, Optional[Capabilities]]:
    """Returns (role, capabilities); capabilities only for the server role."""
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ProtocolError(f"HELLO payload is not valid JSON: {err}") from err
    if not isinstance(doc, dict) or "role" not in doc:
        raise ProtocolError("HELLO payload must be an object with a role")
    role = doc["role"]
    if role == "client":
        return "client", None
    if role == "server":
        if "capabilities" not in doc or not isinstance(doc["capabilities"], dict):
            raise ProtocolError("server HELLO must carry capabilities")
        return "server", Capabilities.from_dict(doc["capabilities"])
    raise ProtocolError(f"unknown HELLO role {role!r}")


def _encode_request_head(seq: int, sigma: float, conditioning: Optional[TensorFrame]) -> bytes:
    flags = _FLAG_CONDITIONING if conditioning is not None else 0
    return _U64.pack(seq) + _F64.pack(sigma) + bytes([flags])


def encode_denoise(
    seq: int, sigma: float, x: TensorFrame, conditioning: Optional[TensorFrame] = None
) -> bytes:
    payload = _encode_request_head(seq, sigma, conditioning) + x.encode()
    if conditioning is not None:
        payload += conditioning.encode()
    return payload


def parse_denoise(payload: bytes) -> tuple[int, float, TensorFrame, Optional[TensorFrame]]:
    reader = _Reader(payload)
    seq = reader.u64()
    sigma = reader.f64()
    flags = reader.u8()
    if flags & ~_FLAG_CONDITIONING:
        raise ProtocolError(f"unknown flag bits 0x{flags:02x}")
    x = reader.tensor()
    conditioning = reader.tensor() if flags & _FLAG_CONDITIONING else None
    reader.finish()
    return seq, sigma, x, conditioning


def encode_vjp(
    seq: int,
    sigma: float,
    x: TensorFrame,
    cotangent: TensorFrame,
    conditioning: Optional[TensorFrame] = None,
) -> bytes:
    payload = _encode_request_head(seq, sigma, conditioning) + x.encode() + cotangent.encode()
    if conditioning is not None:
        payload += conditioning.encode()
    return payload


def parse_vjp(
    payload: bytes,
) -> tuple[int, float, TensorFrame, TensorFrame, Optional[TensorFrame]]:
    reader = _Reader(payload)
    seq = reader.u64()
    sigma = reader.f64()
    flags = reader.u8()
    if flags & ~_FLAG_CONDITIONING:
        raise ProtocolError(f"unknown flag bits 0x{flags:02x}")
    x = reader.tensor()
    cotangent = reader.tensor()
    conditioning = reader.tensor() if flags & _FLAG_CONDITIONING else None
    reader.finish()
    return seq, sigma, x, cotangent, conditioning


def encode_result(seq: int, tensor: TensorFrame) -> bytes:
    return _U64.pack(seq) + tensor.encode()


def parse_result(payload: bytes) -> tuple[int, TensorFrame]:
    reader = _Reader(payload)
    seq = reader.u64()
    tensor = reader.tensor()
    reader.finish()
    return seq, tensor


def encode_error(seq: int, message: str) -> bytes:
    return _U64.pack(seq) + message.encode("utf-8")


def parse_error(payload: bytes) -> tuple[int, str]:
    reader = _Reader(payload)
    seq = reader.u64()
    raw = reader.remainder()
    try:
        message = raw.decode("utf-8")
    except UnicodeDecodeError as err:
        raise ProtocolError(f"ERROR message is not UTF-8: {err}") from err
    return seq, message
