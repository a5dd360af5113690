"""
Tests for lossless plane coding.
"""

import numpy as np
import pytest

from octave_codec.entropy import (
    MODE_CODED,
    MODE_RAW,
    BuiltinLosslessBackend,
    ExternalLosslessBackend,
    entropy_decode_plane,
    entropy_encode_plane,
    range_decode_plane,
    range_encode_plane,
    raw_size,
)
from octave_codec.exceptions import BackendError, ContractError, FormatError


class TestBuiltinCoder:
    """Tests for the adaptive range coder."""

    @pytest.mark.parametrize("bits", range(1, 9))
    def test_random_planes_are_lossless(self, rng, bits):
        plane = rng.integers(0, 1 << bits, size=(9, 13), dtype=np.uint8)
        payload = entropy_encode_plane(plane, bits)
        np.testing.assert_array_equal(entropy_decode_plane(payload, plane.shape, bits), plane)

    def test_smooth_plane_is_coded(self):
        ramp = np.add.outer(np.arange(32), np.arange(32)) // 8
        plane = ramp.astype(np.uint8)
        payload = entropy_encode_plane(plane, 4)
        assert payload[0] == MODE_CODED
        assert len(payload) - 1 < raw_size(plane.shape, 4)
        np.testing.assert_array_equal(entropy_decode_plane(payload, plane.shape, 4), plane)

    def test_range_coder_handles_long_runs(self):
        plane = np.full((64, 64), 200, dtype=np.uint8)
        plane[::7, ::5] = 3
        data = range_encode_plane(plane, 8)
        np.testing.assert_array_equal(range_decode_plane(data, plane.shape, 8), plane)

    def test_never_larger_than_raw(self, rng):
        plane = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        payload = entropy_encode_plane(plane, 8)
        assert len(payload) <= raw_size(plane.shape, 8) + 1

    def test_raw_mode_round_trip(self, rng):
        plane = rng.integers(0, 8, size=(5, 7), dtype=np.uint8)
        packed = np.packbits(np.unpackbits(plane.reshape(-1, 1), axis=1)[:, 5:].reshape(-1)).tobytes()
        decoded = entropy_decode_plane(bytes([MODE_RAW]) + packed, plane.shape, 3)
        np.testing.assert_array_equal(decoded, plane)

    def test_rejects_out_of_range_values(self):
        with pytest.raises(ContractError):
            entropy_encode_plane(np.array([[4]], dtype=np.uint8), 2)

    def test_constant_plane_codes_to_a_few_bytes(self):
        payload = entropy_encode_plane(np.zeros((32, 32), dtype=np.uint8), 8)
        assert payload[0] == MODE_CODED
        assert len(payload) < 64

    def test_truncated_stream_raises(self, rng):
        plane = rng.integers(0, 4, size=(16, 16), dtype=np.uint8)
        data = range_encode_plane(plane, 8)
        with pytest.raises(FormatError, match="ends after"):
            range_decode_plane(data[: len(data) // 2], plane.shape, 8)

    def test_payload_too_short_for_declared_plane(self):
        with pytest.raises(FormatError, match="cannot hold") as excinfo:
            entropy_decode_plane(bytes([MODE_CODED, 0, 0, 0, 0]), (1500, 1500), 8)
        assert excinfo.value.offset == 1

    @pytest.mark.parametrize("payload", [b"", b"\x07abc", bytes([MODE_RAW, 1])])
    def test_malformed_payloads(self, payload):
        with pytest.raises(FormatError):
            entropy_decode_plane(payload, (4, 4), 8)

    def test_backend_protocol(self, rng):
        backend = BuiltinLosslessBackend()
        plane = rng.integers(0, 16, size=(4, 6), dtype=np.uint8)
        np.testing.assert_array_equal(backend.decode(backend.encode(plane, 4), (4, 6), 4), plane)


class TestExternalBackend:
    """Tests for planes coded by an external command."""

    def test_copy_command_round_trip(self, rng):
        backend = ExternalLosslessBackend("cp {input} {output}", "cp {input} {output}")
        plane = rng.integers(0, 32, size=(6, 5), dtype=np.uint8)
        payload = backend.encode(plane, 5)
        assert payload.startswith(b"P5")
        np.testing.assert_array_equal(backend.decode(payload, (6, 5), 5), plane)

    def test_shape_mismatch_from_decoder(self, rng):
        backend = ExternalLosslessBackend("cp {input} {output}", "cp {input} {output}")
        payload = backend.encode(rng.integers(0, 4, size=(3, 3), dtype=np.uint8), 2)
        with pytest.raises(FormatError):
            backend.decode(payload, (4, 4), 2)

    def test_failing_command(self, rng):
        backend = ExternalLosslessBackend("false", "false")
        with pytest.raises(BackendError):
            backend.encode(np.zeros((2, 2), dtype=np.uint8), 1)
