"""Server-agnostic conformance suites for wire implementations.

These run against any server, in-package or external: pass a factory that
opens a fresh connected stream per call (with a read timeout of a few seconds)
and a rank-4 probe array the server is able to denoise. Each check raises
AssertionError with a specific message on violation.

The framing suite pins the error policy: framing corruption ends the
connection (optionally after an ERROR), while bad payloads or unknown opcodes
inside valid frames get an ERROR reply on a connection that stays usable. The
fuzz suite throws a seeded corpus of corrupted byte strings at the server and
asserts every reply is well-formed and the server survives to serve a clean
session afterwards.
"""

from __future__ import annotations

import struct
from typing import Callable, Optional

import numpy as np

from .client import WireSession, handshake, read_message, write_message, WireStream
from .protocol import (
    HEADER_SIZE,
    MAGIC,
    VERSION,
    Opcode,
    ProtocolError,
    TensorFrame,
    encode_denoise,
    encode_error,
    encode_hello_client,
    encode_message,
    encode_result,
    encode_vjp,
    parse_error,
    parse_result,
    split_header,
)

__all__ = ["run_framing_suite", "run_fuzz_suite", "run_capability_suite"]

StreamFactory = Callable[[], WireStream]


def _try_read(stream: WireStream) -> Optional[tuple[int, bytes]]:
    """One reply as (opcode, payload), or None when the peer closed cleanly.

    Raises AssertionError when the peer emitted bytes that are not a valid
    frame: a server must never answer garbage with garbage.
    """
    first = stream.read(1)
    if len(first) == 0:
        return None
    rest = stream.read(HEADER_SIZE - 1)
    header = first + rest
    if len(header) < HEADER_SIZE:
        raise AssertionError(f"server sent a {len(header)}-byte fragment, not a frame")
    try:
        version, opcode, length = split_header(header)
    except ProtocolError as err:
        raise AssertionError(f"server sent an invalid header: {err}") from err
    if version != VERSION:
        raise AssertionError(f"server replied with version {version}")
    payload = stream.read(length) if length else b""
    if len(payload) != length:
        raise AssertionError(f"server truncated its own payload ({len(payload)}/{length})")
    return opcode, payload


def _drain(stream: WireStream, limit: int = 64) -> list[tuple[int, bytes]]:
    replies = []
    for _ in range(limit):
        try:
            reply = _try_read(stream)
        except (TimeoutError, OSError):
            break
        if reply is None:
            break
        replies.append(reply)
    return replies


def _expect_closed(stream: WireStream, context: str) -> None:
    try:
        leftover = stream.read(1)
    except (TimeoutError, OSError):
        return
    assert len(leftover) == 0, f"{context}: connection should be closed but still serves data"


def _handshake_raw(stream: WireStream) -> None:
    write_message(stream, Opcode.HELLO, encode_hello_client())
    reply = _try_read(stream)
    assert reply is not None, "server closed during handshake"
    opcode, _payload = reply
    assert opcode == Opcode.HELLO, f"expected HELLO reply, got opcode {opcode}"


def _denoise_ok(stream: WireStream, probe: np.ndarray, seq: int) -> None:
    frame = TensorFrame.from_array(probe)
    write_message(stream, Opcode.DENOISE, encode_denoise(seq, 1.0, frame))
    reply = _try_read(stream)
    assert reply is not None, "server closed instead of answering a valid DENOISE"
    opcode, payload = reply
    assert opcode == Opcode.RESULT, f"valid DENOISE answered with opcode {opcode}"
    got_seq, tensor = parse_result(payload)
    assert got_seq == seq, f"reply seq {got_seq} != request seq {seq}"
    assert tensor.dims == frame.dims, f"reply dims {tensor.dims} != request dims {frame.dims}"


def run_framing_suite(stream_factory: StreamFactory, probe: np.ndarray) -> None:
    """Connection-level behavior under valid, invalid, and hostile framing."""
    probe = np.asarray(probe, dtype=np.float64)
    assert probe.ndim == 4, "probe must be a rank-4 (N, H, W, C) array"

    # 1. A clean handshake yields typed capabilities.
    with WireSession(stream_factory()) as session:
        caps = handshake(session)
        assert isinstance(caps.supports_vjp, bool)
        assert caps.frame_count >= 0 and caps.channels >= 0
        assert isinstance(caps.latent_space_id, str) and caps.latent_space_id

    # 2. Wrong magic: the connection must be rejected (ERROR and/or close).
    stream = stream_factory()
    bad = b"XXXX" + struct.pack("<HBQ", VERSION, int(Opcode.HELLO), 0)
    stream.write(bad)
    stream.half_close()
    replies = _drain(stream)
    for opcode, _payload in replies:
        assert opcode == Opcode.ERROR, f"bad magic answered with opcode {opcode}"
    _expect_closed(stream, "bad magic")
    stream.close()

    # 3. Version mismatch: ERROR (or close), then closed.
    stream = stream_factory()
    mismatched = MAGIC + struct.pack("<HBQ", 9999, int(Opcode.HELLO), 0)
    stream.write(mismatched)
    stream.half_close()
    replies = _drain(stream)
    for opcode, _payload in replies:
        assert opcode == Opcode.ERROR, f"version mismatch answered with opcode {opcode}"
    _expect_closed(stream, "version mismatch")
    stream.close()

    # 4. Truncated header: never a crash, never a RESULT.
    stream = stream_factory()
    stream.write(encode_message(Opcode.HELLO, encode_hello_client())[: HEADER_SIZE - 8])
    stream.half_close()
    for opcode, _payload in _drain(stream):
        assert opcode == Opcode.ERROR, f"truncated header answered with opcode {opcode}"
    _expect_closed(stream, "truncated header")
    stream.close()

    # 5. Truncated payload: connection ends after at most an ERROR.
    stream = stream_factory()
    whole = encode_message(Opcode.DENOISE, encode_denoise(1, 1.0, TensorFrame.from_array(probe)))
    stream.write(whole[: HEADER_SIZE + 5])
    stream.half_close()
    for opcode, _payload in _drain(stream):
        assert opcode == Opcode.ERROR, f"truncated payload answered with opcode {opcode}"
    _expect_closed(stream, "truncated payload")
    stream.close()

    # 6. Unknown opcode inside a valid frame: ERROR, and the connection stays
    #    open for real work.
    stream = stream_factory()
    _handshake_raw(stream)
    stream.write(encode_message(42, b"\x00" * 8))
    reply = _try_read(stream)
    assert reply is not None, "server closed on an unknown opcode (must stay open)"
    assert reply[0] == Opcode.ERROR, f"unknown opcode answered with opcode {reply[0]}"
    _denoise_ok(stream, probe, seq=7)
    stream.close()

    # 7. Client-role opcodes (RESULT/ERROR) from a client: same contract.
    stream = stream_factory()
    _handshake_raw(stream)
    stream.write(
        encode_message(Opcode.RESULT, encode_result(3, TensorFrame.from_array(probe[:1])))
    )
    reply = _try_read(stream)
    assert reply is not None, "server closed on an unexpected RESULT (must stay open)"
    assert reply[0] == Opcode.ERROR
    stream.write(encode_message(Opcode.ERROR, encode_error(0, "client-side error report")))
    reply = _try_read(stream)
    assert reply is not None, "server closed on an unexpected ERROR (must stay open)"
    assert reply[0] == Opcode.ERROR
    _denoise_ok(stream, probe, seq=8)
    stream.close()

    # 8. Malformed payload in a valid frame: ERROR, connection stays open.
    stream = stream_factory()
    _handshake_raw(stream)
    stream.write(encode_message(Opcode.DENOISE, b"\x01\x02\x03"))
    reply = _try_read(stream)
    assert reply is not None, "server closed on a malformed payload (must stay open)"
    assert reply[0] == Opcode.ERROR
    _denoise_ok(stream, probe, seq=9)
    stream.close()


def _corpus_case(
    rng: np.random.Generator, templates: list[bytes]
) -> bytes:
    kind = int(rng.integers(0, 6))
    if kind == 0:
        length = int(rng.integers(0, 200))
        return rng.integers(0, 256, size=length, dtype=np.uint8).tobytes()
    template = templates[int(rng.integers(0, len(templates)))]
    if kind == 1:
        cut = int(rng.integers(0, len(template)))
        return template[:cut]
    if kind == 2:
        data = bytearray(template)
        for _ in range(int(rng.integers(1, 9))):
            data[int(rng.integers(0, len(data)))] = int(rng.integers(0, 256))
        return bytes(data)
    if kind == 3:
        opcode = int(rng.integers(0, 256))
        payload_len = int(rng.integers(0, 64))
        payload = rng.integers(0, 256, size=payload_len, dtype=np.uint8).tobytes()
        return struct.pack("<4sHBQ", MAGIC, VERSION, opcode, payload_len) + payload
    if kind == 4:
        # Declared length disagrees with the bytes actually sent.
        declared = int(rng.integers(0, 128))
        actual = int(rng.integers(0, 128))
        payload = rng.integers(0, 256, size=actual, dtype=np.uint8).tobytes()
        opcode = int(rng.integers(0, 8))
        return struct.pack("<4sHBQ", MAGIC, VERSION, opcode, declared) + payload
    # kind == 5: absurd declared length with no payload at all.
    return struct.pack("<4sHBQ", MAGIC, VERSION, int(rng.integers(0, 8)), (1 << 62))


def run_fuzz_suite(
    stream_factory: StreamFactory,
    probe: np.ndarray,
    n_cases: int = 10000,
    seed: int = 20240817,
) -> None:
    """Seeded corruption corpus; asserts no crash and well-formed replies only.

    Each case opens a fresh connection, writes one corrupted byte string
    (half the time after a valid handshake), half-closes, drains replies, and
    checks that whatever came back parsed as valid frames. Afterwards the
    server must still complete a clean handshake + denoise round-trip.
    """
    probe = np.asarray(probe, dtype=np.float64)
    rng = np.random.default_rng(seed)
    templates = [
        encode_message(Opcode.HELLO, encode_hello_client()),
        encode_message(
            Opcode.DENOISE, encode_denoise(5, 0.75, TensorFrame.from_array(probe))
        ),
        encode_message(
            Opcode.VJP,
            encode_vjp(
                6, 0.5, TensorFrame.from_array(probe), TensorFrame.from_array(probe)
            ),
        ),
        encode_message(Opcode.ERROR, encode_error(0, "fuzz")),
    ]
    for case_index in range(n_cases):
        blob = _corpus_case(rng, templates)
        stream = stream_factory()
        try:
            if rng.integers(0, 2) == 1:
                stream.write(encode_message(Opcode.HELLO, encode_hello_client()))
            stream.write(blob)
            stream.half_close()
            try:
                _drain(stream)
            except AssertionError as err:
                raise AssertionError(f"fuzz case {case_index}: {err}") from err
        except (OSError, TimeoutError):
            pass  # peer reset mid-write is a valid rejection
        finally:
            stream.close()

    # The server survives the corpus and still serves correct sessions.
    stream = stream_factory()
    _handshake_raw(stream)
    _denoise_ok(stream, probe, seq=11)
    stream.close()


def run_capability_suite(stream_factory: StreamFactory, probe: np.ndarray) -> None:
    """Capability advertising must match serving behavior."""
    probe = np.asarray(probe, dtype=np.float64)
    with WireSession(stream_factory()) as session:
        caps = handshake(session)
        frame = TensorFrame.from_array(probe)

        # VJP honored or refused exactly per the advertised capability.
        write_message(
            session.stream, Opcode.VJP, encode_vjp(21, 1.0, frame, frame)
        )
        reply = _try_read(session.stream)
        assert reply is not None, "server closed on a VJP request"
        opcode, payload = reply
        if caps.supports_vjp:
            assert opcode == Opcode.RESULT, f"advertised VJP answered with opcode {opcode}"
            seq, tensor = parse_result(payload)
            assert seq == 21 and tensor.dims == frame.dims
        else:
            assert opcode == Opcode.ERROR, "supports_vjp=false server must answer VJP with ERROR"
            seq, _message = parse_error(payload)
            assert seq in (0, 21), f"ERROR bound to unknown seq {seq}"
            # The refusal must not end the session.
            _denoise_ok(session.stream, probe, seq=22)

        # Frame-count contract: a strict server rejects other frame counts.
        if caps.frame_count > 0 and probe.shape[0] == caps.frame_count:
            wrong = np.concatenate([probe, probe[:1]])
            write_message(
                session.stream,
                Opcode.DENOISE,
                encode_denoise(23, 1.0, TensorFrame.from_array(wrong)),
            )
            reply = _try_read(session.stream)
            assert reply is not None, "server closed on a frame-count mismatch"
            assert reply[0] == Opcode.ERROR, "frame-count mismatch must be an ERROR"
            _denoise_ok(session.stream, probe, seq=24)
