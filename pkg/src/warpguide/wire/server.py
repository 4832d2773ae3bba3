"""Wire servers: the connection loop, TCP/stdio front ends, loopback fixtures.

Error policy, mirroring the protocol contract: malformed framing (bad magic,
short header, truncated payload, version mismatch) gets an ERROR reply with
sequence 0 where a reply is still possible and then the connection closes,
because resynchronization after framing corruption is impossible. A known-good
frame carrying a bad payload, an unknown opcode, or an unservable request gets
an ERROR reply and the connection stays open.
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..denoiser import (
    Denoiser,
    DenoiserCapabilities,
    GmmPrior,
    LatentVideo,
    gmm_denoise,
    gmm_vjp,
)
from .client import WireStream
from .protocol import (
    HEADER_SIZE,
    VERSION,
    Capabilities,
    Opcode,
    ProtocolError,
    TensorFrame,
    encode_error,
    encode_hello_server,
    encode_message,
    encode_result,
    parse_denoise,
    parse_hello,
    parse_vjp,
    split_header,
)

__all__ = [
    "EchoDenoiser",
    "IdentityJacobianDenoiser",
    "AnyCountGmmDenoiser",
    "serve_connection",
    "WireServer",
    "serve_stdio",
    "main",
]

logger = logging.getLogger(__name__)


class EchoDenoiser:
    """Returns its input unchanged; no VJP. The loopback fixture."""

    @property
    def capabilities(self) -> DenoiserCapabilities:
        return DenoiserCapabilities(supports_vjp=False, frame_count=0, channels=0)

    def denoise(self, video: LatentVideo, sigma: float) -> LatentVideo:
        return video

    def vjp(self, video: LatentVideo, sigma: float, cotangent: LatentVideo) -> LatentVideo:
        raise NotImplementedError("echo fixture has no VJP")


class IdentityJacobianDenoiser:
    """denoise(x) = x, so the VJP returns the cotangent unchanged."""

    @property
    def capabilities(self) -> DenoiserCapabilities:
        return DenoiserCapabilities(supports_vjp=True, frame_count=0, channels=0)

    def denoise(self, video: LatentVideo, sigma: float) -> LatentVideo:
        return video

    def vjp(self, video: LatentVideo, sigma: float, cotangent: LatentVideo) -> LatentVideo:
        return cotangent


@dataclass(frozen=True)
class AnyCountGmmDenoiser:
    """Per-frame GMM denoiser that accepts any frame count (wire fixture).

    Unlike the strict in-process frame denoiser, a server cannot know the
    client's trajectory length up front, so it advertises frame_count 0 and
    checks only the per-frame shape.
    """

    prior: GmmPrior
    frame_shape: tuple[int, int, int]
    supports_vjp: bool = True

    def __post_init__(self) -> None:
        shape = tuple(int(v) for v in self.frame_shape)
        if len(shape) != 3 or any(v < 1 for v in shape):
            raise ValueError(f"frame_shape must be positive (H, W, C), got {self.frame_shape}")
        h, w, c = shape
        if h * w * c != self.prior.dim:
            raise ValueError(
                f"frame size {h * w * c} does not match prior dim {self.prior.dim}"
            )
        object.__setattr__(self, "frame_shape", shape)

    @property
    def capabilities(self) -> DenoiserCapabilities:
        return DenoiserCapabilities(
            supports_vjp=self.supports_vjp, frame_count=0, channels=self.frame_shape[2]
        )

    def _flat(self, video: LatentVideo) -> np.ndarray:
        if video.frame_shape != self.frame_shape:
            raise ValueError(
                f"expected frames of shape {self.frame_shape}, got {video.frame_shape}"
            )
        return video.data.reshape(video.n_frames, -1)

    def denoise(self, video: LatentVideo, sigma: float) -> LatentVideo:
        out = gmm_denoise(self.prior, self._flat(video), sigma)
        return LatentVideo(data=out.reshape(video.data.shape))

    def vjp(self, video: LatentVideo, sigma: float, cotangent: LatentVideo) -> LatentVideo:
        out = gmm_vjp(self.prior, self._flat(video), sigma, self._flat(cotangent))
        return LatentVideo(data=out.reshape(video.data.shape))


def _capabilities_of(denoiser: Denoiser) -> Capabilities:
    caps = denoiser.capabilities
    return Capabilities(
        supports_vjp=caps.supports_vjp,
        frame_count=caps.frame_count,
        channels=caps.channels,
        latent_space_id=caps.latent_space_id,
    )


def _send(stream: WireStream, opcode: int, payload: bytes) -> bool:
    try:
        stream.write(encode_message(opcode, payload))
        return True
    except (OSError, ValueError):
        return False


def _send_error(stream: WireStream, seq: int, message: str) -> bool:
    return _send(stream, Opcode.ERROR, encode_error(seq, message))


def _to_video(frame: TensorFrame, what: str) -> LatentVideo:
    if len(frame.dims) != 4:
        raise ValueError(f"{what} must be rank 4 (N, H, W, C), got rank {len(frame.dims)}")
    return LatentVideo(data=frame.to_array())


def _check_request(
    denoiser: Denoiser, video: LatentVideo, sigma: float
) -> None:
    if not np.isfinite(sigma) or sigma < 0:
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")
    caps = denoiser.capabilities
    if caps.frame_count not in (0, video.n_frames):
        raise ValueError(
            f"server serves {caps.frame_count} frames, request has {video.n_frames}"
        )
    if caps.channels not in (0, video.frame_shape[2]):
        raise ValueError(
            f"server serves {caps.channels} channels, request has {video.frame_shape[2]}"
        )


def serve_connection(stream: WireStream, denoiser: Denoiser) -> None:
    """Serve one duplex stream until EOF or a framing violation."""
    greeted = False
    while True:
        try:
            header = stream.read(HEADER_SIZE)
        except OSError:
            return
        if len(header) == 0:
            return
        if len(header) < HEADER_SIZE:
            _send_error(stream, 0, f"truncated header ({len(header)} of {HEADER_SIZE} bytes)")
            return
        try:
            version, opcode, length = split_header(header)
        except ProtocolError as err:
            _send_error(stream, 0, str(err))
            return
        if version != VERSION:
            _send_error(stream, 0, f"unsupported protocol version {version}")
            return
        try:
            payload = stream.read(length) if length else b""
        except OSError:
            return
        if len(payload) != length:
            _send_error(stream, 0, f"truncated payload ({len(payload)} of {length} bytes)")
            return

        if opcode == Opcode.HELLO:
            try:
                role, _ = parse_hello(payload)
                if role != "client":
                    raise ProtocolError(f"server expected a client HELLO, got role {role!r}")
            except ProtocolError as err:
                if not _send_error(stream, 0, str(err)):
                    return
                continue
            greeted = True
            if not _send(stream, Opcode.HELLO, encode_hello_server(_capabilities_of(denoiser))):
                return
            continue

        if opcode == Opcode.DENOISE:
            seq = 0
            try:
                seq, sigma, frame, _conditioning = parse_denoise(payload)
                if not greeted:
                    raise ValueError("handshake required before DENOISE")
                video = _to_video(frame, "latent")
                _check_request(denoiser, video, sigma)
                result = denoiser.denoise(video, sigma)
                if result.data.shape != video.data.shape:
                    raise ValueError("denoiser changed the latent shape")
            except (ProtocolError, ValueError) as err:
                if not _send_error(stream, seq, str(err)):
                    return
                continue
            except Exception as err:  # denoiser bug; connection can continue
                logger.exception("denoise failed (seq %d)", seq)
                if not _send_error(stream, seq, f"denoise failed: {err}"):
                    return
                continue
            reply = encode_result(seq, TensorFrame.from_array(result.data))
            if not _send(stream, Opcode.RESULT, reply):
                return
            continue

        if opcode == Opcode.VJP:
            seq = 0
            try:
                seq, sigma, frame, cot_frame, _conditioning = parse_vjp(payload)
                if not greeted:
                    raise ValueError("handshake required before VJP")
                if not denoiser.capabilities.supports_vjp:
                    raise ValueError("server does not support VJP")
                if cot_frame.dims != frame.dims:
                    raise ValueError(
                        f"cotangent dims {cot_frame.dims} do not match latent dims {frame.dims}"
                    )
                video = _to_video(frame, "latent")
                cotangent = _to_video(cot_frame, "cotangent")
                _check_request(denoiser, video, sigma)
                result = denoiser.vjp(video, sigma, cotangent)
                if result.data.shape != video.data.shape:
                    raise ValueError("vjp changed the latent shape")
            except (ProtocolError, ValueError) as err:
                if not _send_error(stream, seq, str(err)):
                    return
                continue
            except Exception as err:
                logger.exception("vjp failed (seq %d)", seq)
                if not _send_error(stream, seq, f"vjp failed: {err}"):
                    return
                continue
            reply = encode_result(seq, TensorFrame.from_array(result.data))
            if not _send(stream, Opcode.RESULT, reply):
                return
            continue

        # Known-but-unexpected (RESULT/ERROR from a client) or unknown opcodes:
        # framing was valid, so answer and keep the connection.
        if not _send_error(stream, 0, f"unexpected opcode {opcode}"):
            return


class _SocketStream(WireStream):
    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock

    def read(self, n: int) -> bytes:
        chunks: list[bytes] = []
        got = 0
        while got < n:
            try:
                chunk = self._sock.recv(min(n - got, 1 << 20))
            except socket.timeout:
                break
            if not chunk:
                break
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class WireServer:
    """Threaded TCP front end; one connection loop per client."""

    def __init__(self, denoiser: Denoiser, host: str = "127.0.0.1", port: int = 0) -> None:
        self._denoiser = denoiser
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.host = host
        self.port = int(self._listener.getsockname()[1])
        self._stopping = threading.Event()
        self._accept_thread: Optional[threading.Thread] = None

    @property
    def uri(self) -> str:
        return f"tcp://{self.host}:{self.port}"

    def start(self) -> "WireServer":
        thread = threading.Thread(target=self._accept_loop, daemon=True, name="wire-accept")
        self._accept_thread = thread
        thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(30.0)
            threading.Thread(
                target=self._serve_one, args=(conn,), daemon=True, name="wire-conn"
            ).start()

    def _serve_one(self, conn: socket.socket) -> None:
        stream = _SocketStream(conn)
        try:
            serve_connection(stream, self._denoiser)
        except Exception:  # pragma: no cover - belt and braces for fuzzing
            logger.exception("connection handler failed")
        finally:
            stream.close()

    def close(self) -> None:
        self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)

    def __enter__(self) -> "WireServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


class _StdStream(WireStream):
    def __init__(self) -> None:
        self._stdin = sys.stdin.buffer
        self._stdout = sys.stdout.buffer

    def read(self, n: int) -> bytes:
        out = b""
        while len(out) < n:
            chunk = self._stdin.read(n - len(out))
            if not chunk:
                break
            out += chunk
        return out

    def write(self, data: bytes) -> None:
        self._stdout.write(data)
        self._stdout.flush()

    def close(self) -> None:
        pass


def serve_stdio(denoiser: Denoiser) -> None:
    """Serve exactly one session over this process's stdin/stdout."""
    serve_connection(_StdStream(), denoiser)


def _build_denoiser(args: argparse.Namespace) -> Denoiser:
    if args.fixture == "echo":
        return EchoDenoiser()
    if args.fixture == "identity-vjp":
        return IdentityJacobianDenoiser()
    if args.fixture == "gmm":
        if not args.prior or not args.frame_shape:
            raise SystemExit("--fixture gmm requires --prior and --frame-shape")
        prior = GmmPrior.from_json(Path(args.prior).read_text(encoding="utf-8"))
        h, w, c = (int(v) for v in args.frame_shape.split(","))
        return AnyCountGmmDenoiser(
            prior=prior, frame_shape=(h, w, c), supports_vjp=not args.no_vjp
        )
    raise SystemExit(f"unknown fixture {args.fixture!r}")


def main(argv: Optional[list[str]] = None) -> int:
    """Serve a builtin denoiser over stdio (default) or TCP."""
    parser = argparse.ArgumentParser(
        prog="warpguide-wire-server", description="Serve a denoiser over the wire protocol."
    )
    parser.add_argument(
        "--fixture",
        choices=("echo", "identity-vjp", "gmm"),
        default="echo",
        help="which builtin denoiser to serve",
    )
    parser.add_argument("--prior", help="path to a GMM prior JSON (fixture gmm)")
    parser.add_argument(
        "--frame-shape", help="H,W,C of one frame (fixture gmm)", default=None
    )
    parser.add_argument(
        "--no-vjp", action="store_true", help="advertise supports_vjp = false"
    )
    parser.add_argument(
        "--tcp", type=int, default=None, metavar="PORT", help="serve TCP instead of stdio"
    )
    args = parser.parse_args(argv)
    denoiser = _build_denoiser(args)
    if args.tcp is not None:
        server = WireServer(denoiser, port=args.tcp).start()
        print(json.dumps({"listening": server.uri}), flush=True)
        try:
            while True:
                threading.Event().wait(3600)
        except KeyboardInterrupt:
            server.close()
        return 0
    serve_stdio(denoiser)
    return 0


if __name__ == "__main__":
    sys.exit(main())
