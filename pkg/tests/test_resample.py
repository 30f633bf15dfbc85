import numpy as np
import pytest

from prnu_forge.resample import ResolutionSpec, pad_reflect_square, resize_bicubic


def cubic_kernel(x, a=-0.5):
    x = abs(x)
    if x <= 1.0:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2.0:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def resize_oracle(img, th, tw):
    """Scalar-loop resampler with the same kernel and clamping conventions."""
    h, w = img.shape
    out = np.zeros((th, tw))
    for oy in range(th):
        sy = (oy + 0.5) * (h / th) - 0.5
        by = int(np.floor(sy))
        for ox in range(tw):
            sx = (ox + 0.5) * (w / tw) - 0.5
            bx = int(np.floor(sx))
            acc = 0.0
            for i in range(-1, 3):
                for j in range(-1, 3):
                    yy = min(max(by + i, 0), h - 1)
                    xx = min(max(bx + j, 0), w - 1)
                    acc += (cubic_kernel(sy - (by + i))
                            * cubic_kernel(sx - (bx + j)) * img[yy, xx])
            out[oy, ox] = acc
    return out


class TestPadReflectSquare:
    def test_square_unchanged(self):
        img = np.arange(9, dtype=np.float32).reshape(3, 3)
        assert pad_reflect_square(img) is img

    def test_2x3_reflects_row0(self):
        img = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
        out = pad_reflect_square(img)
        expected = np.array([[1, 2, 3], [4, 5, 6], [1, 2, 3]], dtype=np.float32)
        assert out.shape == (3, 3)
        np.testing.assert_array_equal(out, expected)

    def test_3x2_reflects_col0(self):
        img = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
        out = pad_reflect_square(img)
        assert out.shape == (3, 3)
        np.testing.assert_array_equal(out[:, 2], img[:, 0])

    def test_idempotent_on_square_output(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 9)).astype(np.float32)
        once = pad_reflect_square(img)
        np.testing.assert_array_equal(pad_reflect_square(once), once)

    def test_degenerate_dim_rejected(self):
        with pytest.raises(ValueError):
            pad_reflect_square(np.ones((1, 5), dtype=np.float32))


class TestResizeBicubic:
    def test_identity_bit_exact(self):
        rng = np.random.default_rng(1)
        img = rng.random((7, 11)).astype(np.float32)
        out = resize_bicubic(img, (7, 11))
        assert out.dtype == np.float32
        np.testing.assert_array_equal(out, img)

    def test_constant_preserved(self):
        img = np.full((10, 12), 0.4321, dtype=np.float32)
        for target in [(4, 4), (8, 16), (20, 6)]:
            out = resize_bicubic(img, target)
            np.testing.assert_allclose(out, 0.4321, atol=1e-6)

    def test_ramp_downsize_matches_scalar_oracle(self):
        img = (np.arange(64, dtype=np.float64).reshape(8, 8) / 63.0)
        out = resize_bicubic(img.astype(np.float32), (4, 4))
        expected = np.clip(resize_oracle(img, 4, 4), 0.0, 1.0)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_random_resize_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        img = rng.random((9, 13))
        for target in [(5, 7), (12, 6), (17, 17)]:
            out = resize_bicubic(img.astype(np.float32), target)
            expected = np.clip(resize_oracle(img, *target), 0.0, 1.0)
            np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_small_target_rejected(self):
        img = np.zeros((8, 8), dtype=np.float32)
        with pytest.raises(ValueError):
            resize_bicubic(img, (3, 8))


class TestResolutionSpec:
    def test_single_level_weight(self):
        spec = ResolutionSpec(((64, 64),))
        np.testing.assert_array_equal(spec.weights(), [1.0])

    def test_two_level_weights(self):
        spec = ResolutionSpec(((1024, 1024), (1400, 1400)))
        np.testing.assert_allclose(spec.weights(), [1024 / 1400, 1.0], atol=1e-12)

    def test_parse(self):
        spec = ResolutionSpec.parse("192x192,256x256")
        assert spec.levels == ((192, 192), (256, 256))

    def test_rejects_empty_and_nonpositive(self):
        with pytest.raises(ValueError):
            ResolutionSpec(())
        with pytest.raises(ValueError):
            ResolutionSpec(((0, 4),))
