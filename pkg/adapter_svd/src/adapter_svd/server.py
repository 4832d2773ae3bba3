"""Serving loop and transports for the video-model wire adapter.

One connection serves one logical denoiser, single-flight. Framing damage
(bad magic, truncation, version mismatch, oversize declarations) ends the
connection after at most one ERROR frame; malformed payloads and unexpected
opcodes inside valid frames get an ERROR reply and the connection stays
usable. When the configured model failed to load, the server stays up but
refuses every handshake with the load error's detail.

Transports: TCP (thread per connection) or this process's stdio, selected
by the config's transport URI ("tcp://host:port" or "stdio").
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
import threading
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .model import ModelLoadError, VideoDenoiseModel, load_model
from .wire import (
    HEADER_LEN,
    OP_DENOISE,
    OP_ERROR,
    OP_HELLO,
    OP_RESULT,
    OP_VJP,
    PROTOCOL_VERSION,
    FrameError,
    error_payload,
    pack_frame,
    parse_client_hello,
    parse_denoise_request,
    parse_vjp_request,
    read_header,
    result_payload,
    server_hello_payload,
)

__all__ = ["AdapterServer", "serve_connection", "serve_stdio", "serve", "main"]

logger = logging.getLogger(__name__)

_CONFIG_KEYS = {"model", "backend", "weights", "transport", "precision", "enable_vjp"}


class _Channel:
    """Blocking byte channel; read returns what arrived, b"" at EOF."""

    def read(self, count: int) -> bytes:
        raise NotImplementedError

    def write(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class _SocketChannel(_Channel):
    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock

    def read(self, count: int) -> bytes:
        chunks = b""
        while len(chunks) < count:
            try:
                piece = self._sock.recv(count - len(chunks))
            except OSError:
                break
            if not piece:
                break
            chunks += piece
        return chunks

    def write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _StdChannel(_Channel):
    def __init__(self) -> None:
        self._stdin = sys.stdin.buffer
        self._stdout = sys.stdout.buffer

    def read(self, count: int) -> bytes:
        chunks = b""
        while len(chunks) < count:
            piece = self._stdin.read(count - len(chunks))
            if not piece:
                break
            chunks += piece
        return chunks

    def write(self, data: bytes) -> None:
        self._stdout.write(data)
        self._stdout.flush()

    def close(self) -> None:
        pass


def _reply(channel: _Channel, opcode: int, payload: bytes) -> bool:
    try:
        channel.write(pack_frame(opcode, payload))
        return True
    except (OSError, FrameError):
        return False


def _refuse(channel: _Channel, message: str) -> None:
    _reply(channel, OP_ERROR, error_payload(0, message))


def _check_latent(model: VideoDenoiseModel, latent: np.ndarray, sigma: float) -> None:
    if latent.ndim != 4:
        raise ValueError(f"latent must be rank 4 (N, H, W, C), got rank {latent.ndim}")
    session = model.session
    if latent.shape[0] != session.frame_count:
        raise ValueError(
            f"model serves {session.frame_count} frames, request has {latent.shape[0]}"
        )
    if latent.shape[3] != session.channels:
        raise ValueError(
            f"model serves {session.channels} channels, request has {latent.shape[3]}"
        )
    if not np.isfinite(latent).all():
        raise ValueError("latent must be finite")
    if not np.isfinite(sigma) or sigma < 0:
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")


def serve_connection(channel: _Channel, model: Union[VideoDenoiseModel, ModelLoadError]) -> None:
    """Serve one duplex channel until EOF or a framing violation."""
    greeted = False
    while True:
        header = channel.read(HEADER_LEN)
        if len(header) == 0:
            return
        if len(header) < HEADER_LEN:
            _refuse(channel, f"truncated header ({len(header)} of {HEADER_LEN} bytes)")
            return
        try:
            version, opcode, length = read_header(header)
        except FrameError as err:
            _refuse(channel, str(err))
            return
        if version != PROTOCOL_VERSION:
            _refuse(channel, f"unsupported protocol version {version}")
            return
        payload = channel.read(length) if length else b""
        if len(payload) != length:
            _refuse(channel, f"truncated payload ({len(payload)} of {length} bytes)")
            return

        if isinstance(model, ModelLoadError):
            _refuse(channel, f"model load failed: {model}")
            return

        if opcode == OP_HELLO:
            try:
                parse_client_hello(payload)
            except FrameError as err:
                if not _reply(channel, OP_ERROR, error_payload(0, str(err))):
                    return
                continue
            greeted = True
            hello = server_hello_payload(
                frame_count=model.session.frame_count,
                channels=model.session.channels,
                supports_vjp=model.supports_vjp,
                latent_space_id=model.latent_space_id,
            )
            if not _reply(channel, OP_HELLO, hello):
                return
            continue

        if opcode == OP_DENOISE:
            seq = 0
            try:
                request = parse_denoise_request(payload)
                seq = request.seq
                if not greeted:
                    raise ValueError("handshake required before DENOISE")
                # Signaling NaNs in fuzzed f32 payloads warn on upcast.
                with np.errstate(invalid="ignore"):
                    latent = np.asarray(request.latent, dtype=np.float64)
                _check_latent(model, latent, request.sigma)
                result = model.denoise(latent, request.sigma, request.conditioning)
                if result.shape != latent.shape:
                    raise ValueError("model changed the latent shape")
            except (FrameError, ValueError) as err:
                if not _reply(channel, OP_ERROR, error_payload(seq, str(err))):
                    return
                continue
            except Exception as err:  # backend bug; the connection can continue
                logger.exception("denoise failed (seq %d)", seq)
                if not _reply(channel, OP_ERROR, error_payload(seq, f"denoise failed: {err}")):
                    return
                continue
            if not _reply(channel, OP_RESULT, result_payload(seq, result)):
                return
            continue

        if opcode == OP_VJP:
            seq = 0
            try:
                request = parse_vjp_request(payload)
                seq = request.seq
                if not greeted:
                    raise ValueError("handshake required before VJP")
                if not model.supports_vjp:
                    raise ValueError("server does not support VJP")
                if request.cotangent.shape != request.latent.shape:
                    raise ValueError(
                        f"cotangent dims {request.cotangent.shape} do not match "
                        f"latent dims {request.latent.shape}"
                    )
                with np.errstate(invalid="ignore"):
                    latent = np.asarray(request.latent, dtype=np.float64)
                    cotangent = np.asarray(request.cotangent, dtype=np.float64)
                _check_latent(model, latent, request.sigma)
                if not np.isfinite(cotangent).all():
                    raise ValueError("cotangent must be finite")
                result = model.vjp(latent, request.sigma, cotangent, request.conditioning)
                if result.shape != latent.shape:
                    raise ValueError("model changed the latent shape")
            except (FrameError, ValueError) as err:
                if not _reply(channel, OP_ERROR, error_payload(seq, str(err))):
                    return
                continue
            except Exception as err:
                logger.exception("vjp failed (seq %d)", seq)
                if not _reply(channel, OP_ERROR, error_payload(seq, f"vjp failed: {err}")):
                    return
                continue
            if not _reply(channel, OP_RESULT, result_payload(seq, result)):
                return
            continue

        # Valid frame, wrong opcode for a server (RESULT/ERROR or unknown):
        # answer and keep serving.
        if not _reply(channel, OP_ERROR, error_payload(0, f"unexpected opcode {opcode}")):
            return


class AdapterServer:
    """Threaded TCP front end around one model session."""

    def __init__(
        self,
        model: Union[VideoDenoiseModel, ModelLoadError],
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        self._model = model
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.host = host
        self.port = int(self._listener.getsockname()[1])
        self._stopping = threading.Event()
        self._accept_thread: Optional[threading.Thread] = None

    @property
    def uri(self) -> str:
        return f"tcp://{self.host}:{self.port}"

    def start(self) -> "AdapterServer":
        thread = threading.Thread(target=self._accept_loop, daemon=True, name="adapter-accept")
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
                target=self._serve_one, args=(conn,), daemon=True, name="adapter-conn"
            ).start()

    def _serve_one(self, conn: socket.socket) -> None:
        channel = _SocketChannel(conn)
        try:
            serve_connection(channel, self._model)
        except Exception:  # pragma: no cover - belt and braces for fuzzing
            logger.exception("connection handler failed")
        finally:
            channel.close()

    def close(self) -> None:
        self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)

    def __enter__(self) -> "AdapterServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


def serve_stdio(model: Union[VideoDenoiseModel, ModelLoadError]) -> None:
    """Serve exactly one session over this process's stdin/stdout."""
    serve_connection(_StdChannel(), model)


class ConfigError(ValueError):
    """Bad serving configuration; maps to exit code 2."""


def _validate_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(config) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    transport = config.get("transport", "stdio")
    if not isinstance(transport, str) or not (
        transport == "stdio" or transport.startswith("tcp://")
    ):
        raise ConfigError(f"transport must be 'stdio' or 'tcp://host:port', got {transport!r}")
    if transport.startswith("tcp://"):
        host, sep, port = transport[len("tcp://") :].rpartition(":")
        if not sep or not host or not port.isdigit():
            raise ConfigError(f"transport must be 'tcp://host:port', got {transport!r}")
    return {**config, "transport": transport}


def _bring_up_model(config: dict) -> Union[VideoDenoiseModel, ModelLoadError]:
    try:
        return load_model(config)
    except ModelLoadError as err:
        # Stay up and refuse handshakes so the failure is observable on the
        # wire, per the serving contract.
        logger.error("model load failed: %s", err)
        return err


def serve(config: dict) -> int:
    """Run the configured server until interrupted; returns an exit code."""
    config = _validate_config(config)
    model = _bring_up_model(config)
    transport = config["transport"]
    if transport == "stdio":
        serve_stdio(model)
        return 0
    host, _, port = transport[len("tcp://") :].rpartition(":")
    server = AdapterServer(model, host=host, port=int(port)).start()
    print(json.dumps({"listening": server.uri}), flush=True)
    try:
        while True:
            threading.Event().wait(3600)
    except KeyboardInterrupt:
        server.close()
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="adapter-svd",
        description="Serve an image-to-video latent denoiser over the tensor wire protocol.",
    )
    parser.add_argument("--config", metavar="PATH", help="JSON serving config")
    parser.add_argument("--model", default=None, help="model id (default mock-svd)")
    parser.add_argument(
        "--transport", default=None, help="'stdio' or 'tcp://host:port' (default stdio)"
    )
    parser.add_argument("--precision", default=None, choices=("fp32", "fp16"))
    parser.add_argument(
        "--no-vjp", action="store_true", help="do not advertise VJP support"
    )
    args = parser.parse_args(argv)

    config: dict = {}
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as err:
            print(json.dumps({"error": f"cannot read config: {err}"}), file=sys.stderr)
            return 2
        except json.JSONDecodeError as err:
            print(json.dumps({"error": f"config is not valid JSON: {err}"}), file=sys.stderr)
            return 2
    if args.model is not None:
        config["model"] = args.model
    if args.transport is not None:
        config["transport"] = args.transport
    if args.precision is not None:
        config["precision"] = args.precision
    if args.no_vjp:
        config["enable_vjp"] = False

    try:
        return serve(config)
    except ConfigError as err:
        print(json.dumps({"error": str(err)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
