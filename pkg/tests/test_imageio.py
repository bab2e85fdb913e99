import numpy as np
import pytest
from PIL import Image

from oracles import bilinear_direct

from deepspace.imageio import (
    ImageRecord,
    crop,
    decode_image,
    fit_resize_side,
    preprocess_for_model,
    resize_bilinear,
    resize_planes,
    save_image,
)
from deepspace.tensor import Rng


class TestDecode:
    def test_all_white_png(self, tmp_path):
        path = tmp_path / "white.png"
        Image.fromarray(np.full((4, 4, 3), 255, np.uint8), "RGB").save(path)
        rec = decode_image(path)
        assert rec.pixels.shape == (3, 4, 4)
        assert np.all(rec.pixels == 1.0)

    def test_known_pattern_round_trip(self, tmp_path):
        rng = Rng(0)
        pattern = (rng.uniform(0, 1, (3, 4, 4)) * 255).astype(np.uint8)
        path = tmp_path / "pat.png"
        save_image(pattern / 255.0, path)
        rec = decode_image(path)
        assert np.array_equal(np.rint(rec.pixels * 255).astype(np.uint8), pattern)

    def test_ppm_p6_round_trip(self, tmp_path):
        # raw P6 written by hand: 2x2 with distinct channel values
        path = tmp_path / "t.ppm"
        body = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30])
        path.write_bytes(b"P6\n2 2\n255\n" + body)
        rec = decode_image(path)
        assert rec.pixels.shape == (3, 2, 2)
        assert rec.pixels[0, 0, 0] == 1.0 and rec.pixels[1, 0, 1] == 1.0
        assert np.allclose(rec.pixels[:, 1, 1], np.array([10, 20, 30]) / 255.0)

    def test_grayscale_rejected(self, tmp_path):
        path = tmp_path / "gray.png"
        Image.fromarray(np.zeros((4, 4), np.uint8), "L").save(path)
        with pytest.raises(ValueError, match="RGB"):
            decode_image(path)

    def test_unreadable_names_path(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"not an image")
        with pytest.raises(ValueError, match="junk.png"):
            decode_image(path)


class TestResize:
    def test_constant_stays_constant(self):
        img = ImageRecord(np.full((3, 7, 5), 0.37, np.float32))
        for h, w in [(3, 3), (14, 10), (1, 1), (256, 256)]:
            out = resize_bilinear(img, h, w)
            assert out.pixels.shape == (3, h, w)
            assert np.allclose(out.pixels, 0.37, atol=1e-6)

    def test_512_to_256(self):
        rng = Rng(1)
        img = ImageRecord(rng.uniform(0, 1, (3, 512, 512)))
        out = resize_bilinear(img, 256, 256)
        assert out.pixels.shape == (3, 256, 256)

    def test_2x2_to_4x4_matches_hand_values(self):
        plane = np.array([[0.0, 1.0], [0.0, 1.0]])
        got = resize_planes(plane, 4, 4)
        # half-pixel centers: sample coords -0.25, 0.25, 0.75, 1.25 -> clamped
        want_row = [0.0, 0.25, 0.75, 1.0]
        assert np.allclose(got, np.tile(want_row, (4, 1)), atol=1e-12)

    def test_matches_scalar_loop_oracle(self):
        rng = Rng(2)
        plane = rng.uniform(0, 1, (5, 7), dtype=np.float64)
        for h, w in [(3, 4), (10, 9), (5, 7), (11, 3)]:
            assert np.allclose(resize_planes(plane, h, w), bilinear_direct(plane, h, w), atol=1e-12)

    def test_round_trip_smooth_gradient(self):
        yy, xx = np.meshgrid(np.linspace(0, 1, 64), np.linspace(0, 1, 64), indexing="ij")
        img = ImageRecord(np.stack([xx, yy, (xx + yy) / 2]).astype(np.float32))
        out = resize_bilinear(resize_bilinear(img, 256, 256), 64, 64)
        assert np.abs(out.pixels - img.pixels).mean() < 0.02


class TestCrop:
    def test_center_crop_offsets(self):
        rng = Rng(3)
        img = ImageRecord(rng.uniform(0, 1, (3, 256, 256)))
        out = crop(img, "center", 227)
        assert out.pixels.shape == (3, 227, 227)
        assert np.array_equal(out.pixels, img.pixels[:, 14:241, 14:241])

    def test_random_offsets_in_range(self):
        img = ImageRecord(np.zeros((3, 256, 256), np.float32))
        img.pixels[:, 0, 0] = 1.0
        rng = Rng(4)
        for _ in range(20):
            out = crop(img, "random", 227, rng)
            assert out.pixels.shape == (3, 227, 227)

    def test_same_seed_same_crops(self):
        rng = Rng(5)
        img = ImageRecord(rng.uniform(0, 1, (3, 64, 64)))
        a = [crop(img, "random", 32, Rng(6)).pixels for _ in range(3)]
        b = [crop(img, "random", 32, Rng(6)).pixels for _ in range(3)]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_too_large(self):
        img = ImageRecord(np.zeros((3, 64, 64), np.float32))
        with pytest.raises(ValueError, match="crop side"):
            crop(img, "center", 65)


def test_fit_resize_side():
    assert fit_resize_side(227) == 256
    assert fit_resize_side(64) == 72
    assert fit_resize_side(32) == 36


def test_preprocess_for_model():
    rng = Rng(7)
    img = ImageRecord(rng.uniform(0, 1, (3, 100, 140)))
    out = preprocess_for_model(img, 64)
    assert out.pixels.shape == (3, 64, 64)
