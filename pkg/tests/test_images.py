"""
Tests for image I/O and geometry helpers.
"""

import numpy as np
import pytest

from octave_codec.exceptions import ContractError, FormatError
from octave_codec.images import (
    crop,
    decode_netpbm,
    encode_netpbm,
    pad_replicate,
    padded_extent,
    read_image,
    resize_bilinear,
    to_uint8,
    write_image,
)


class TestNetpbm:
    """Tests for the byte-level PPM/PGM codec."""

    def test_ppm_layout(self):
        pixels = np.arange(3 * 2 * 2, dtype=np.uint8).reshape(3, 2, 2)
        data = encode_netpbm(pixels)
        assert data.startswith(b"P6\n2 2\n255\n")
        # interleaved RGB, row-major
        assert data[11:14] == bytes([0, 4, 8])
        np.testing.assert_array_equal(decode_netpbm(data), pixels)

    def test_pgm_with_comment(self):
        data = b"P5\n# made by hand\n3 1\n255\n" + bytes([1, 2, 3])
        np.testing.assert_array_equal(decode_netpbm(data), [[1, 2, 3]])

    def test_rejects_16_bit(self):
        with pytest.raises(FormatError, match="maxval"):
            decode_netpbm(b"P5\n1 1\n65535\n\x00\x00")

    def test_rejects_other_magic(self):
        with pytest.raises(FormatError, match="magic"):
            decode_netpbm(b"P3\n1 1\n255\n0 0 0")

    def test_truncated_raster(self):
        with pytest.raises(FormatError, match="truncated"):
            decode_netpbm(b"P6\n2 2\n255\n" + bytes(5))

    def test_needs_bytes(self):
        with pytest.raises(ContractError):
            encode_netpbm(np.zeros((2, 2), dtype=np.float64))


class TestImageFiles:
    """Tests for reading and writing images on disk."""

    def test_to_uint8_rounds_and_saturates(self):
        np.testing.assert_array_equal(to_uint8(np.array([0.6 / 255, 1.49 / 255, -0.2, 1.7])), [1, 1, 0, 255])

    def test_ppm_round_trip(self, image, tmp_path):
        path = write_image(tmp_path / "out" / "x.ppm", image)
        np.testing.assert_array_equal(to_uint8(read_image(path)), to_uint8(image))

    def test_png_goes_through_pillow(self, image, tmp_path):
        path = write_image(tmp_path / "x.png", image)
        assert path.read_bytes().startswith(b"\x89PNG")
        np.testing.assert_array_equal(to_uint8(read_image(path)), to_uint8(image))

    def test_grayscale_pgm_is_expanded_to_rgb(self, tmp_path):
        path = tmp_path / "g.pgm"
        path.write_bytes(encode_netpbm(np.full((2, 3), 51, dtype=np.uint8)))
        loaded = read_image(path)
        assert loaded.shape == (3, 2, 3)
        np.testing.assert_allclose(loaded, 0.2)


class TestGeometry:
    """Tests for padding, cropping and resizing."""

    @pytest.mark.parametrize(
        "extent,expected",
        [(1, 64), (64, 64), (65, 80), (70, 80), (128, 128)],
    )
    def test_padded_extent(self, extent, expected):
        assert padded_extent(extent, 16, 64) == expected

    def test_pad_replicates_edges(self, image):
        padded = pad_replicate(image, 16, 64)
        assert padded.shape == (3, 64, 80)
        np.testing.assert_array_equal(padded[:, 60, 75], image[:, 49, 69])
        np.testing.assert_array_equal(crop(padded, 50, 70), image)

    def test_pad_is_noop_on_aligned_input(self, rng):
        x = rng.random((3, 64, 96))
        assert pad_replicate(x, 16, 64) is x

    def test_resize_bilinear(self, rng):
        x = rng.random((3, 50, 70))
        resized = resize_bilinear(x, 32)
        assert resized.shape == (3, 32, 32)
        assert resized.min() >= 0.0 and resized.max() <= 1.0
        constant = resize_bilinear(np.full((3, 40, 40), 0.25), 16)
        np.testing.assert_allclose(constant, 0.25, atol=1e-6)
