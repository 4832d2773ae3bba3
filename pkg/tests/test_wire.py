"""Wire framing, payload codecs, transports, and conformance suites."""

from __future__ import annotations

import struct
import sys

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from warpguide import CapabilityError, GmmPrior, LatentVideo
from warpguide.wire import (
    HEADER_SIZE,
    MAGIC,
    MAX_PAYLOAD,
    Capabilities,
    Opcode,
    ProtocolError,
    RemoteError,
    TensorFrame,
    WireSession,
    connect_denoiser,
    handshake,
    open_stream,
    read_message,
    remote_denoise,
    remote_vjp,
    write_message,
)
from warpguide.wire.conformance import (
    run_capability_suite,
    run_framing_suite,
    run_fuzz_suite,
)
from warpguide.wire.protocol import (
    encode_denoise,
    encode_error,
    encode_hello_client,
    encode_hello_server,
    encode_message,
    encode_result,
    encode_vjp,
    parse_denoise,
    parse_error,
    parse_hello,
    parse_result,
    parse_vjp,
    split_header,
)
from warpguide.wire.server import (
    AnyCountGmmDenoiser,
    EchoDenoiser,
    IdentityJacobianDenoiser,
    WireServer,
)


def small_prior() -> GmmPrior:
    return GmmPrior(
        weights=np.array([0.6, 0.4]),
        means=np.stack([np.linspace(-1, 1, 48), np.linspace(1, -1, 48)]),
        variances=np.array([0.2, 0.3]),
    )


def f32_video(shape=(2, 4, 4, 3), seed=0) -> LatentVideo:
    data = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    return LatentVideo(data=data.astype(np.float64))


@pytest.fixture(scope="module")
def echo_server():
    with WireServer(EchoDenoiser()) as server:
        yield server


@pytest.fixture(scope="module")
def gmm_server():
    denoiser = AnyCountGmmDenoiser(prior=small_prior(), frame_shape=(4, 4, 3))
    with WireServer(denoiser) as server:
        yield server


@pytest.fixture(scope="module")
def no_vjp_server():
    denoiser = AnyCountGmmDenoiser(
        prior=small_prior(), frame_shape=(4, 4, 3), supports_vjp=False
    )
    with WireServer(denoiser) as server:
        yield server


class TestTensorFrame:
    def test_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            rank = int(rng.integers(1, 5))
            dims = tuple(int(d) for d in rng.integers(1, 6, size=rank))
            values = rng.standard_normal(dims).astype("<f4")
            frame = TensorFrame.from_array(values)
            seq, back = parse_result(encode_result(3, frame))
            assert seq == 3
            assert back.dims == dims
            assert back.data.tobytes() == values.tobytes()

    def test_zero_size_dimension(self):
        frame = TensorFrame.from_array(np.zeros((2, 0, 3), dtype=np.float32))
        _, back = parse_result(encode_result(0, frame))
        assert back.dims == (2, 0, 3)
        assert back.data.size == 0

    def test_scalar_rank_zero(self):
        frame = TensorFrame.from_array(np.float32(2.5))
        _, back = parse_result(encode_result(0, frame))
        assert back.dims == ()
        assert float(back.data) == 2.5

    def test_dims_must_match_element_count(self):
        with pytest.raises(ProtocolError):
            TensorFrame(dims=(2, 3), data=np.zeros(5, dtype=np.float32))

    def test_oversize_dimension_rejected(self):
        with pytest.raises(ProtocolError):
            TensorFrame(dims=(-1,), data=np.zeros(1, dtype=np.float32))

    def test_to_array_returns_float64(self):
        frame = TensorFrame.from_array(np.ones((2, 2), dtype=np.float32))
        assert frame.to_array().dtype == np.float64


class TestFraming:
    def test_header_layout_matches_the_documented_struct(self):
        message = encode_message(Opcode.RESULT, b"abc")
        assert message[:HEADER_SIZE] == MAGIC + struct.pack("<HBQ", 1, 3, 3)
        assert message[HEADER_SIZE:] == b"abc"

    def test_split_header_round_trip(self):
        header = MAGIC + struct.pack("<HBQ", 1, int(Opcode.DENOISE), 77)
        assert split_header(header) == (1, int(Opcode.DENOISE), 77)

    def test_split_header_rejections(self):
        with pytest.raises(ProtocolError):
            split_header(b"XXXX" + struct.pack("<HBQ", 1, 0, 0))
        with pytest.raises(ProtocolError):
            split_header(MAGIC + struct.pack("<HBQ", 1, 0, MAX_PAYLOAD + 1))
        with pytest.raises(ProtocolError):
            split_header(MAGIC[:3])

    def test_unknown_version_and_opcode_pass_the_header_layer(self):
        # Policy for those lives at the session level, not in the parser.
        assert split_header(MAGIC + struct.pack("<HBQ", 9, 250, 0)) == (9, 250, 0)

    def test_payload_ceiling(self):
        class FakeBytes(bytes):
            def __len__(self):
                return MAX_PAYLOAD + 1

        with pytest.raises(ProtocolError):
            encode_message(Opcode.RESULT, FakeBytes())


class TestPayloadCodecs:
    def test_hello_round_trip(self):
        role, caps = parse_hello(encode_hello_client())
        assert role == "client" and caps is None
        sent = Capabilities(supports_vjp=True, frame_count=14, channels=4)
        role, caps = parse_hello(encode_hello_server(sent))
        assert role == "server"
        assert caps == sent

    @pytest.mark.parametrize(
        "payload",
        [
            b"not json",
            b"[]",
            b'{"no_role": 1}',
            b'{"role": "intruder"}',
            b'{"role": "server"}',
            b'{"role": "server", "capabilities": {"supports_vjp": true}}',
            b'{"role": "server", "capabilities": {"supports_vjp": 1, '
            b'"frame_count": 0, "channels": 3}}',
        ],
    )
    def test_hello_rejections(self, payload):
        with pytest.raises(ProtocolError):
            parse_hello(payload)

    def test_denoise_round_trip_with_and_without_conditioning(self):
        x = TensorFrame.from_array(np.arange(12, dtype=np.float32).reshape(1, 2, 2, 3))
        cond = TensorFrame.from_array(np.ones((2, 2), dtype=np.float32))
        seq, sigma, got_x, got_cond = parse_denoise(encode_denoise(9, 0.25, x))
        assert (seq, sigma, got_cond) == (9, 0.25, None)
        assert got_x.data.tobytes() == x.data.tobytes()
        seq, sigma, got_x, got_cond = parse_denoise(encode_denoise(10, 1.5, x, cond))
        assert got_cond is not None
        assert got_cond.data.tobytes() == cond.data.tobytes()

    def test_vjp_round_trip(self):
        x = TensorFrame.from_array(np.full((1, 2, 2, 1), 3.0, dtype=np.float32))
        cot = TensorFrame.from_array(np.full((1, 2, 2, 1), -1.0, dtype=np.float32))
        seq, sigma, got_x, got_cot, cond = parse_vjp(encode_vjp(4, 2.0, x, cot))
        assert (seq, sigma, cond) == (4, 2.0, None)
        assert got_cot.data.tobytes() == cot.data.tobytes()

    def test_unknown_flag_bits_rejected(self):
        x = TensorFrame.from_array(np.zeros((1, 1, 1, 1), dtype=np.float32))
        payload = bytearray(encode_denoise(1, 1.0, x))
        payload[16] |= 0x02  # flags byte follows seq u64 + sigma f64
        with pytest.raises(ProtocolError):
            parse_denoise(bytes(payload))

    def test_trailing_bytes_rejected(self):
        x = TensorFrame.from_array(np.zeros((1, 1, 1, 1), dtype=np.float32))
        with pytest.raises(ProtocolError):
            parse_denoise(encode_denoise(1, 1.0, x) + b"\x00")
        with pytest.raises(ProtocolError):
            parse_result(encode_result(1, x) + b"junk")

    def test_truncated_payload_rejected(self):
        x = TensorFrame.from_array(np.zeros((2, 2), dtype=np.float32))
        blob = encode_result(1, x)
        with pytest.raises(ProtocolError):
            parse_result(blob[:-3])

    def test_unsupported_dtype_tag_rejected(self):
        x = TensorFrame.from_array(np.zeros((2,), dtype=np.float32))
        blob = bytearray(encode_result(1, x))
        blob[8 + 1 + 4] = 7  # dtype byte after seq, rank, one u32 dim
        with pytest.raises(ProtocolError):
            parse_result(bytes(blob))

    def test_error_round_trip_and_utf8_enforcement(self):
        seq, message = parse_error(encode_error(0, "denoiser exploded"))
        assert (seq, message) == (0, "denoiser exploded")
        with pytest.raises(ProtocolError):
            parse_error(struct.pack("<Q", 1) + b"\xff\xfe")

    def test_capabilities_dict_round_trip(self):
        caps = Capabilities(
            supports_vjp=False, frame_count=25, channels=4, latent_space_id="svd-vae"
        )
        assert Capabilities.from_dict(caps.to_dict()) == caps


class TestTcpTransport:
    def test_handshake_reports_server_capabilities(self, gmm_server):
        with WireSession(open_stream(gmm_server.uri)) as session:
            caps = handshake(session)
            assert caps.supports_vjp is True
            assert caps.frame_count == 0
            assert caps.channels == 3

    def test_echo_round_trip_is_bit_exact_for_f32(self, echo_server):
        video = f32_video(seed=1)
        with WireSession(open_stream(echo_server.uri)) as session:
            handshake(session)
            for _ in range(3):
                out = remote_denoise(session, video.data, 0.5)
                assert_array_equal(out, video.data)

    def test_identity_vjp_returns_the_cotangent(self):
        with WireServer(IdentityJacobianDenoiser()) as server:
            with connect_denoiser(server.uri) as denoiser:
                video = f32_video(seed=2)
                cot = f32_video(seed=3)
                out = denoiser.vjp(video, 0.7, cot)
                assert_array_equal(out.data, cot.data)

    def test_wire_denoiser_is_single_flight(self, echo_server):
        with connect_denoiser(echo_server.uri) as denoiser:
            assert denoiser.capabilities.single_flight is True

    def test_vjp_without_capability_fails_locally(self, no_vjp_server):
        with connect_denoiser(no_vjp_server.uri) as denoiser:
            assert denoiser.capabilities.supports_vjp is False
            video = f32_video(seed=4)
            with pytest.raises(CapabilityError):
                denoiser.vjp(video, 1.0, video)

    def test_raw_vjp_request_answered_with_remote_error(self, no_vjp_server):
        with WireSession(open_stream(no_vjp_server.uri)) as session:
            handshake(session)
            with pytest.raises(RemoteError, match="VJP"):
                remote_vjp(session, f32_video(seed=5).data, 1.0, f32_video(seed=6).data)

    def test_server_error_carries_the_request_seq(self, echo_server):
        # A rank-2 tensor is not a latent video; the server answers ERROR
        # bound to the offending sequence number and keeps the connection.
        with WireSession(open_stream(echo_server.uri)) as session:
            handshake(session)
            frame = TensorFrame.from_array(np.zeros((3, 3), dtype=np.float32))
            seq = session.next_seq()
            write_message(session.stream, Opcode.DENOISE, encode_denoise(seq, 1.0, frame))
            _, opcode, payload = read_message(session.stream)
            assert opcode == Opcode.ERROR
            err_seq, message = parse_error(payload)
            assert err_seq == seq
            assert message
            out = remote_denoise(session, f32_video(seed=13).data, 0.4)
            assert out.shape == (2, 4, 4, 3)

    def test_bad_uri_rejected(self):
        with pytest.raises(ValueError):
            open_stream("ftp://127.0.0.1:1")
        with pytest.raises(ValueError):
            open_stream("tcp://missing-port")
        with pytest.raises(ValueError):
            open_stream("stdio://")


class TestDualPathAgreement:
    def test_loopback_gmm_matches_in_process_bit_for_bit(self, gmm_server):
        local = AnyCountGmmDenoiser(prior=small_prior(), frame_shape=(4, 4, 3))
        video = f32_video(shape=(2, 4, 4, 3), seed=7)
        cot = f32_video(shape=(2, 4, 4, 3), seed=8)
        with connect_denoiser(gmm_server.uri) as remote:
            for sigma in (0.05, 0.8, 5.0):
                ours = local.denoise(video, sigma)
                theirs = remote.denoise(video, sigma)
                assert_array_equal(
                    theirs.data, ours.data.astype(np.float32).astype(np.float64)
                )
                ours_vjp = local.vjp(video, sigma, cot)
                theirs_vjp = remote.vjp(video, sigma, cot)
                assert_array_equal(
                    theirs_vjp.data, ours_vjp.data.astype(np.float32).astype(np.float64)
                )


class TestStdioTransport:
    def test_echo_over_child_process(self):
        uri = f"stdio://{sys.executable} -m warpguide.wire.server --fixture echo"
        video = f32_video(seed=9)
        with connect_denoiser(uri) as denoiser:
            assert denoiser.capabilities.frame_count == 0
            out = denoiser.denoise(video, 0.3)
            assert_array_equal(out.data, video.data)


class TestConformance:
    def test_framing_suite_against_the_tcp_server(self, echo_server):
        probe = f32_video(seed=10).data
        run_framing_suite(lambda: open_stream(echo_server.uri), probe)

    def test_capability_suite_against_both_vjp_modes(self, gmm_server, no_vjp_server):
        probe = f32_video(shape=(1, 4, 4, 3), seed=11).data
        run_capability_suite(lambda: open_stream(gmm_server.uri), probe)
        run_capability_suite(lambda: open_stream(no_vjp_server.uri), probe)

    def test_fuzz_suite_smoke(self, echo_server):
        probe = f32_video(shape=(1, 4, 4, 3), seed=12).data
        run_fuzz_suite(lambda: open_stream(echo_server.uri), probe, n_cases=300, seed=5)
