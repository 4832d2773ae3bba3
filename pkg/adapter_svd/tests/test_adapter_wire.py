"""Byte-level checks for the adapter's frame codec.

The interop tests build requests with the solver package's client codec and
parse them here (and encode replies here, parsed by the client codec). Byte
equality on whole frames is the loopback guarantee the server relies on.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from adapter_svd.wire import (
    HEADER_LEN,
    MAGIC,
    OP_DENOISE,
    OP_ERROR,
    OP_HELLO,
    OP_RESULT,
    PAYLOAD_LIMIT,
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
from warpguide.wire import Capabilities, TensorFrame
from warpguide.wire.protocol import (
    encode_denoise,
    encode_error,
    encode_hello_client,
    encode_hello_server,
    encode_message,
    encode_result,
    encode_vjp,
    parse_error,
    parse_hello,
    parse_result,
)


def f32(shape, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


class TestFraming:
    def test_header_layout_is_frozen(self):
        frame = pack_frame(OP_RESULT, b"abc")
        assert frame == MAGIC + struct.pack("<HBQ", 1, 3, 3) + b"abc"

    @pytest.mark.parametrize("opcode", [OP_HELLO, OP_DENOISE, OP_ERROR])
    def test_header_round_trip(self, opcode):
        payload = b"x" * 11
        version, got_op, length = read_header(pack_frame(opcode, payload)[:HEADER_LEN])
        assert (version, got_op, length) == (PROTOCOL_VERSION, opcode, len(payload))

    def test_read_header_rejects_short_magic_and_oversize(self):
        with pytest.raises(FrameError):
            read_header(b"NVSW\x01\x00")
        with pytest.raises(FrameError):
            read_header(b"XXXX" + struct.pack("<HBQ", 1, 0, 0))
        with pytest.raises(FrameError):
            read_header(MAGIC + struct.pack("<HBQ", 1, 0, PAYLOAD_LIMIT + 1))

    def test_pack_frame_rejects_oversize_payload(self):
        class FakeBytes(bytes):
            def __len__(self) -> int:
                return PAYLOAD_LIMIT + 1

        with pytest.raises(FrameError):
            pack_frame(OP_RESULT, FakeBytes(b""))


class TestRequestInterop:
    def test_denoise_request_from_client_codec(self):
        x = f32((25, 2, 3, 4), seed=1)
        payload = encode_denoise(9, 0.75, TensorFrame.from_array(x))
        req = parse_denoise_request(payload)
        assert req.seq == 9
        assert req.sigma == 0.75
        assert req.conditioning is None
        assert req.latent.dtype == np.float32
        assert_array_equal(req.latent, x)

    def test_denoise_with_conditioning(self):
        x = f32((2, 2, 2, 4), seed=2)
        cond = f32((1, 2, 2, 4), seed=3)
        payload = encode_denoise(
            10, 1.5, TensorFrame.from_array(x), TensorFrame.from_array(cond)
        )
        req = parse_denoise_request(payload)
        assert_array_equal(req.latent, x)
        assert_array_equal(req.conditioning, cond)

    def test_vjp_request_orders_latent_then_cotangent(self):
        x = f32((3, 2, 2, 4), seed=4)
        cot = f32((3, 2, 2, 4), seed=5)
        cond = f32((1, 2, 2, 4), seed=6)
        payload = encode_vjp(
            11,
            2.0,
            TensorFrame.from_array(x),
            TensorFrame.from_array(cot),
            TensorFrame.from_array(cond),
        )
        req = parse_vjp_request(payload)
        assert req.seq == 11
        assert_array_equal(req.latent, x)
        assert_array_equal(req.cotangent, cot)
        assert_array_equal(req.conditioning, cond)

    def test_truncated_and_padded_payloads_are_rejected(self):
        payload = encode_denoise(1, 1.0, TensorFrame.from_array(f32((2, 2))))
        with pytest.raises(FrameError):
            parse_denoise_request(payload[:-1])
        with pytest.raises(FrameError):
            parse_denoise_request(payload + b"\x00")

    def test_unknown_flag_bits_are_rejected(self):
        payload = bytearray(encode_denoise(1, 1.0, TensorFrame.from_array(f32((2, 2)))))
        payload[16] |= 0x02
        with pytest.raises(FrameError):
            parse_denoise_request(bytes(payload))

    def test_unknown_dtype_tag_is_rejected(self):
        payload = bytearray(encode_denoise(1, 1.0, TensorFrame.from_array(f32((2, 2)))))
        # head (17 bytes) | rank u8 | two u32 dims | dtype tag
        payload[17 + 1 + 8] = 7
        with pytest.raises(FrameError):
            parse_denoise_request(bytes(payload))

    def test_dims_beyond_the_payload_ceiling_are_rejected(self):
        head = struct.pack("<QdB", 1, 1.0, 0)
        blob = bytes([2]) + struct.pack("<II", 0xFFFFFFFF, 0xFFFFFFFF) + bytes([0])
        with pytest.raises(FrameError):
            parse_denoise_request(head + blob)


class TestReplyInterop:
    def test_result_parsed_by_client_codec(self):
        values = f32((25, 2, 2, 4), seed=7)
        seq, frame = parse_result(result_payload(21, values))
        assert seq == 21
        assert frame.dims == values.shape
        assert_array_equal(np.asarray(frame.data), values)

    @pytest.mark.parametrize("values", [np.float32(3.5), f32((2, 0, 3))])
    def test_result_handles_scalar_and_zero_size(self, values):
        seq, frame = parse_result(result_payload(1, np.asarray(values)))
        assert seq == 1
        assert frame.dims == np.asarray(values).shape

    def test_result_frame_is_byte_identical_to_the_client_encoder(self):
        values = f32((2, 3, 4), seed=8)
        ours = pack_frame(OP_RESULT, result_payload(5, values))
        theirs = encode_message(3, encode_result(5, TensorFrame.from_array(values)))
        assert ours == theirs

    def test_error_payload_matches_the_client_encoder(self):
        assert error_payload(4, "nope") == encode_error(4, "nope")
        seq, message = parse_error(error_payload(4, "nope"))
        assert (seq, message) == (4, "nope")

    def test_server_hello_matches_the_client_encoder_byte_for_byte(self):
        ours = server_hello_payload(
            frame_count=25, channels=4, supports_vjp=True, latent_space_id="svd-vae"
        )
        caps = Capabilities(
            supports_vjp=True, frame_count=25, channels=4, latent_space_id="svd-vae"
        )
        assert ours == encode_hello_server(caps)
        role, parsed = parse_hello(ours)
        assert role == "server"
        assert parsed == caps


class TestClientHello:
    def test_accepts_the_client_codec_greeting(self):
        parse_client_hello(encode_hello_client())

    @pytest.mark.parametrize(
        "payload",
        [
            b"\xff\xfe",
            b"[1, 2]",
            json.dumps({"part": "client"}).encode(),
            json.dumps({"role": "server"}).encode(),
        ],
    )
    def test_rejects_non_client_greetings(self, payload):
        with pytest.raises(FrameError):
            parse_client_hello(payload)
