"""Pixel-array contract, PNG round-trips, resizing."""

import numpy as np
import pytest

from restorkit.errors import ImageError
from restorkit.imageio import (
    MIN_SIDE,
    from_uint8,
    load_image,
    resize_image,
    resize_to,
    save_image,
    to_uint8,
    validate_image,
)


def unit_image(side=32, seed=0):
    return np.random.default_rng(seed).random((side, side, 3)).astype(np.float32)


class TestValidate:
    def test_accepts_the_contract(self):
        img = unit_image()
        assert validate_image(img) is not None

    def test_rejects_bad_shapes(self):
        with pytest.raises(ImageError):
            validate_image(np.zeros((32, 32)))
        with pytest.raises(ImageError):
            validate_image(np.zeros((32, 32, 4)))

    def test_rejects_small_sides(self):
        with pytest.raises(ImageError):
            validate_image(np.zeros((MIN_SIDE - 1, 32, 3)))

    def test_rejects_integer_dtype(self):
        with pytest.raises(ImageError):
            validate_image(np.zeros((32, 32, 3), dtype=np.uint8))

    def test_rejects_nan_and_out_of_range(self):
        img = unit_image()
        bad = img.copy()
        bad[0, 0, 0] = np.nan
        with pytest.raises(ImageError):
            validate_image(bad)
        bad = img.copy()
        bad[0, 0, 0] = 1.5
        with pytest.raises(ImageError):
            validate_image(bad)
        bad = img.copy()
        bad[0, 0, 0] = -0.1
        with pytest.raises(ImageError):
            validate_image(bad)


class TestQuantization:
    def test_round_half_to_even_at_the_boundary(self):
        # 0.5/255 quantizes by banker's rounding, matching np.rint.
        img = np.full((16, 16, 3), 0.5 / 255.0, dtype=np.float32)
        assert to_uint8(img).max() == 0
        img = np.full((16, 16, 3), 1.5 / 255.0, dtype=np.float32)
        assert to_uint8(img).min() == 2

    def test_inverse_on_exact_levels(self):
        levels = np.arange(256, dtype=np.uint8).reshape(16, 16)
        img = np.stack([levels] * 3, axis=-1)
        assert np.array_equal(to_uint8(from_uint8(img)), img)

    def test_endpoints(self):
        assert to_uint8(np.zeros((16, 16, 3))).max() == 0
        assert to_uint8(np.ones((16, 16, 3))).min() == 255


class TestRoundTrip:
    def test_save_load_quantizes_once(self, tmp_path):
        img = unit_image()
        p = tmp_path / "x.png"
        save_image(img, p)
        back = load_image(p)
        assert back.dtype == np.float32
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-6
        # A second trip through disk is exact: quantization is idempotent.
        save_image(back, tmp_path / "y.png")
        assert np.array_equal(load_image(tmp_path / "y.png"), back)

    def test_same_pixels_same_bytes(self, tmp_path):
        img = unit_image(seed=3)
        save_image(img, tmp_path / "a.png")
        save_image(img, tmp_path / "b.png")
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_save_validates(self, tmp_path):
        with pytest.raises(ImageError):
            save_image(np.full((32, 32, 3), 1.2, dtype=np.float32), tmp_path / "x.png")

    def test_load_rejects_non_images(self, tmp_path):
        bad = tmp_path / "not.png"
        bad.write_bytes(b"plainly not a png")
        with pytest.raises(ImageError):
            load_image(bad)


class TestResize:
    def test_square_resize_shape_and_range(self):
        out = resize_image(unit_image(48), 32)
        assert out.shape == (32, 32, 3)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_no_op_when_already_square_at_size(self):
        img = unit_image(32)
        assert np.array_equal(resize_image(img, 32), img)

    def test_center_crop_uses_the_middle(self):
        # Left half black, right half white, wide image: the center crop
        # straddles the boundary, so the mean sits near one half.
        img = np.zeros((32, 64, 3), dtype=np.float32)
        img[:, 32:] = 1.0
        out = resize_image(img, 32)
        assert out.mean() == pytest.approx(0.5, abs=0.05)

    def test_resize_to_explicit_dims(self):
        out = resize_to(unit_image(32), 20, 44)
        assert out.shape == (20, 44, 3)
        img = unit_image(32)
        assert np.array_equal(resize_to(img, 32, 32), img)
