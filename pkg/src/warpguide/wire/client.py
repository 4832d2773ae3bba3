"""Client side of the wire: transports, handshake, and a Denoiser adapter.

Transports are selected by URI scheme: ``tcp://host:port`` opens a socket,
``stdio://<command line>`` spawns the command (shlex-split) and talks over its
stdin/stdout. One session is single-flight: each request waits for its reply,
matched by sequence id, before the next is issued.
"""

from __future__ import annotations

import shlex
import socket
import subprocess
from typing import Optional

import numpy as np

from ..denoiser import CapabilityError, DenoiserCapabilities, LatentVideo
from .protocol import (
    HEADER_SIZE,
    VERSION,
    Capabilities,
    Opcode,
    ProtocolError,
    RemoteError,
    TensorFrame,
    encode_denoise,
    encode_hello_client,
    encode_message,
    encode_vjp,
    parse_error,
    parse_hello,
    parse_result,
    split_header,
)

__all__ = [
    "WireStream",
    "TcpStream",
    "StdioStream",
    "open_stream",
    "read_message",
    "write_message",
    "WireSession",
    "handshake",
    "remote_denoise",
    "remote_vjp",
    "WireDenoiser",
    "connect_denoiser",
]

DEFAULT_TIMEOUT = 30.0


class WireStream:
    """Duplex byte stream: blocking exact reads, flushed writes."""

    def read(self, n: int) -> bytes:  # pragma: no cover - interface
        raise NotImplementedError

    def write(self, data: bytes) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def half_close(self) -> None:
        """Signal end-of-writes while still reading replies."""

    def close(self) -> None:  # pragma: no cover - interface
        raise NotImplementedError


class TcpStream(WireStream):
    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock

    def read(self, n: int) -> bytes:
        chunks: list[bytes] = []
        got = 0
        while got < n:
            chunk = self._sock.recv(min(n - got, 1 << 20))
            if not chunk:
                break
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def half_close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class StdioStream(WireStream):
    """Talks to a child process over its stdin/stdout pipes."""

    def __init__(self, process: subprocess.Popen) -> None:
        self._process = process

    def read(self, n: int) -> bytes:
        assert self._process.stdout is not None
        out = b""
        while len(out) < n:
            chunk = self._process.stdout.read(n - len(out))
            if not chunk:
                break
            out += chunk
        return out

    def write(self, data: bytes) -> None:
        assert self._process.stdin is not None
        self._process.stdin.write(data)
        self._process.stdin.flush()

    def half_close(self) -> None:
        assert self._process.stdin is not None
        try:
            self._process.stdin.close()
        except OSError:
            pass

    def close(self) -> None:
        for pipe in (self._process.stdin, self._process.stdout):
            if pipe is not None:
                try:
                    pipe.close()
                except OSError:
                    pass
        self._process.terminate()
        try:
            self._process.wait(timeout=5)
        except subprocess.TimeoutExpired:  # pragma: no cover - stuck child
            self._process.kill()
            self._process.wait()


def open_stream(uri: str, timeout: float = DEFAULT_TIMEOUT) -> WireStream:
    """Open the transport named by a tcp:// or stdio:// URI."""
    if uri.startswith("tcp://"):
        rest = uri[len("tcp://") :]
        host, sep, port = rest.rpartition(":")
        if not sep or not host:
            raise ValueError(f"tcp URI must be tcp://host:port, got {uri!r}")
        sock = socket.create_connection((host, int(port)), timeout=timeout)
        return TcpStream(sock)
    if uri.startswith("stdio://"):
        command = shlex.split(uri[len("stdio://") :])
        if not command:
            raise ValueError(f"stdio URI carries no command: {uri!r}")
        process = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )
        return StdioStream(process)
    raise ValueError(f"unknown transport scheme in {uri!r} (want tcp:// or stdio://)")


def _read_exact(stream: WireStream, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) == 0 and n > 0:
        raise ProtocolError(f"connection closed while reading {what}")
    if len(data) != n:
        raise ProtocolError(f"short read on {what}: wanted {n} bytes, got {len(data)}")
    return data


def read_message(stream: WireStream) -> tuple[int, int, bytes]:
    """Read one framed message; returns (version, opcode, payload)."""
    header = _read_exact(stream, HEADER_SIZE, "header")
    version, opcode, length = split_header(header)
    payload = _read_exact(stream, length, "payload") if length else b""
    return version, opcode, payload


def write_message(stream: WireStream, opcode: int, payload: bytes) -> None:
    stream.write(encode_message(opcode, payload))


class WireSession:
    """One handshaken connection with sequence-id bookkeeping."""

    def __init__(self, stream: WireStream) -> None:
        self.stream = stream
        self.capabilities: Optional[Capabilities] = None
        self._seq = 0

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def close(self) -> None:
        self.stream.close()

    def __enter__(self) -> "WireSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def handshake(session: WireSession) -> Capabilities:
    """HELLO exchange; returns the server's capabilities.

    Raises:
        RemoteError: Server answered with ERROR (refused session).
        ProtocolError: Malformed reply or version mismatch.
    """
    write_message(session.stream, Opcode.HELLO, encode_hello_client())
    version, opcode, payload = read_message(session.stream)
    if version != VERSION:
        raise ProtocolError(f"server speaks version {version}, client speaks {VERSION}")
    if opcode == Opcode.ERROR:
        seq, message = parse_error(payload)
        raise RemoteError(seq, message)
    if opcode != Opcode.HELLO:
        raise ProtocolError(f"expected HELLO reply, got opcode {opcode}")
    role, caps = parse_hello(payload)
    if role != "server" or caps is None:
        raise ProtocolError("handshake reply must be a server HELLO with capabilities")
    session.capabilities = caps
    return caps


def _await_result(session: WireSession, seq: int, request_dims: tuple[int, ...]) -> TensorFrame:
    version, opcode, payload = read_message(session.stream)
    if version != VERSION:
        raise ProtocolError(f"reply has version {version}, expected {VERSION}")
    if opcode == Opcode.ERROR:
        err_seq, message = parse_error(payload)
        raise RemoteError(err_seq, message)
    if opcode != Opcode.RESULT:
        raise ProtocolError(f"expected RESULT for seq {seq}, got opcode {opcode}")
    got_seq, tensor = parse_result(payload)
    if got_seq != seq:
        raise ProtocolError(f"reply seq {got_seq} does not match request seq {seq}")
    if tensor.dims != request_dims:
        raise ProtocolError(
            f"reply dims {tensor.dims} do not match request dims {request_dims} (seq {seq})"
        )
    return tensor


def remote_denoise(
    session: WireSession,
    x: np.ndarray,
    sigma: float,
    conditioning: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One DENOISE round-trip; the reply must carry identical dims."""
    frame = TensorFrame.from_array(x)
    cond = TensorFrame.from_array(conditioning) if conditioning is not None else None
    seq = session.next_seq()
    write_message(session.stream, Opcode.DENOISE, encode_denoise(seq, sigma, frame, cond))
    return _await_result(session, seq, frame.dims).to_array()


def remote_vjp(
    session: WireSession,
    x: np.ndarray,
    sigma: float,
    cotangent: np.ndarray,
    conditioning: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One VJP round-trip; servers without the capability answer ERROR."""
    frame = TensorFrame.from_array(x)
    cot = TensorFrame.from_array(cotangent)
    cond = TensorFrame.from_array(conditioning) if conditioning is not None else None
    seq = session.next_seq()
    write_message(session.stream, Opcode.VJP, encode_vjp(seq, sigma, frame, cot, cond))
    return _await_result(session, seq, frame.dims).to_array()


class WireDenoiser:
    """Denoiser contract served by a remote process.

    Tensors cross the wire as f32, so round-tripping float64 latents loses
    the low mantissa bits; in-process and remote paths agree bit-for-bit when
    inputs are f32-representable.
    """

    def __init__(self, session: WireSession, conditioning: Optional[np.ndarray] = None) -> None:
        if session.capabilities is None:
            handshake(session)
        self._session = session
        self._conditioning = conditioning

    @property
    def capabilities(self) -> DenoiserCapabilities:
        caps = self._session.capabilities
        assert caps is not None
        return DenoiserCapabilities(
            supports_vjp=caps.supports_vjp,
            frame_count=caps.frame_count,
            channels=caps.channels,
            latent_space_id=caps.latent_space_id,
            single_flight=True,
        )

    def denoise(self, video: LatentVideo, sigma: float) -> LatentVideo:
        out = remote_denoise(self._session, video.data, sigma, self._conditioning)
        return LatentVideo(data=out)

    def vjp(self, video: LatentVideo, sigma: float, cotangent: LatentVideo) -> LatentVideo:
        if not self.capabilities.supports_vjp:
            raise CapabilityError("server does not advertise VJP support")
        out = remote_vjp(self._session, video.data, sigma, cotangent.data, self._conditioning)
        return LatentVideo(data=out)

    def close(self) -> None:
        self._session.close()

    def __enter__(self) -> "WireDenoiser":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect_denoiser(
    uri: str,
    timeout: float = DEFAULT_TIMEOUT,
    conditioning: Optional[np.ndarray] = None,
) -> WireDenoiser:
    """Open a transport, perform the handshake, and wrap it as a Denoiser."""
    session = WireSession(open_stream(uri, timeout=timeout))
    try:
        handshake(session)
    except Exception:
        session.close()
        raise
    return WireDenoiser(session, conditioning=conditioning)
