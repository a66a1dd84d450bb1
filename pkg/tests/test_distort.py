import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zselect import distort as d


def image(seed=0, c=1, h=16, w=16):
    return np.random.default_rng(seed).random((c, h, w)).astype(np.float32)


def dense_correlate(img, kernel):
    """Direct 2-D correlation with edge clamping, one output pixel at a time."""
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    c, h, w = img.shape
    out = np.zeros((c, h, w))
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        yy = min(max(y + i - ry, 0), h - 1)
                        xx = min(max(x + j - rx, 0), w - 1)
                        acc += kernel[i, j] * img[ch, yy, xx]
                out[ch, y, x] = acc
    return out


images = arrays(np.float32, (1, 6, 7), elements=st.floats(0, 1, width=32))


class TestIdentities:
    @given(images)
    def test_all_identity_parameters(self, img):
        np.testing.assert_array_equal(d.gamma_correct(img, 1.0), img)
        np.testing.assert_array_equal(d.salt_pepper(img, 0.0, seed=3), img)
        np.testing.assert_array_equal(d.gaussian_noise(img, 0.0, seed=3), img)
        np.testing.assert_array_equal(d.frosted_glass(img, 0, seed=3), img)
        np.testing.assert_array_equal(d.motion_blur(img, 1), img)
        np.testing.assert_array_equal(d.occlude(img, 2, 2, 0, 0), img)
        np.testing.assert_allclose(d.gaussian_blur(img, 1e-3), img, atol=1e-6)


class TestMotionBlur:
    def test_horizontal_box_filter(self):
        img = image(1)
        box = np.zeros((9, 9))
        box[4, :] = 1 / 9
        np.testing.assert_allclose(d.motion_blur(img, 9, 0.0), dense_correlate(img, box), atol=1e-6)

    def test_kernel_shape(self):
        k = d.motion_kernel(5, 90.0)
        assert k.sum() == pytest.approx(1.0)
        assert np.count_nonzero(k[:, 2]) == 5

    def test_mean_preserved(self):
        # flat border wider than the kernel radius, so edge clamping moves no mass
        img = np.full((1, 48, 48), 0.5, dtype=np.float32)
        img[:, 8:-8, 8:-8] = image(2, h=32, w=32)
        out = d.motion_blur(img, 9, 30.0)
        assert out.mean() == pytest.approx(img.mean(), abs=1e-3)

    def test_even_length_rejected(self):
        with pytest.raises(ValueError):
            d.motion_blur(image(), 4)


class TestFrostedGlass:
    def test_pixels_come_from_input(self):
        img = image(4)
        out = d.frosted_glass(img, 2, seed=9)
        assert set(np.unique(out)) <= set(np.unique(img))

    def test_seeded(self):
        img = image(4)
        np.testing.assert_array_equal(d.frosted_glass(img, 2, 5), d.frosted_glass(img, 2, 5))
        assert not np.array_equal(d.frosted_glass(img, 2, 5), d.frosted_glass(img, 2, 6))


class TestGaussianBlur:
    @pytest.mark.parametrize("sigma", [0.7, 1.5])
    def test_dense_oracle(self, sigma):
        img = image(5, c=3, h=12, w=10)
        k1 = d.gaussian_kernel1d(sigma)
        np.testing.assert_allclose(
            d.gaussian_blur(img, sigma), dense_correlate(img, np.outer(k1, k1)), atol=1e-5
        )

    def test_kernel(self):
        k = d.gaussian_kernel1d(1.5)
        assert len(k) == 2 * math.ceil(4.5) + 1 and k.sum() == pytest.approx(1.0)

    def test_constant_image(self):
        img = np.full((3, 9, 9), 0.37, dtype=np.float32)
        np.testing.assert_allclose(d.gaussian_blur(img, 1.5), img, atol=1e-6)


class TestNoise:
    def test_std_on_mid_gray(self):
        img = np.full((1, 64, 64), 0.5, dtype=np.float64)
        diff = d.gaussian_noise(img, 0.05, seed=11) - img
        assert diff.std(ddof=1) == pytest.approx(0.05, rel=0.05)

    @settings(max_examples=30)
    @given(images, st.floats(0, 2), st.integers(0, 2**32))
    def test_stays_in_range(self, img, sigma, seed):
        out = d.gaussian_noise(img, sigma, seed)
        assert out.min() >= 0 and out.max() <= 1

    def test_salt_pepper_full(self):
        out = d.salt_pepper(image(6, c=3), 1.0, seed=1)
        assert set(np.unique(out)) <= {0.0, 1.0}

    def test_salt_pepper_rate(self):
        img = np.full((1, 64, 64), 0.5, dtype=np.float32)
        frac = np.mean(d.salt_pepper(img, 0.1, seed=2) != 0.5)
        sd = math.sqrt(0.1 * 0.9 / img.size)
        assert abs(frac - 0.1) <= 3 * sd

    def test_salt_pepper_hits_all_channels(self):
        out = d.salt_pepper(np.full((3, 32, 32), 0.5, dtype=np.float32), 0.2, seed=4)
        hit = out != 0.5
        assert np.array_equal(hit[0], hit[1]) and np.array_equal(hit[0], hit[2])


class TestGamma:
    def test_hand_value(self):
        img = np.full((1, 2, 2), 0.5, dtype=np.float32)
        np.testing.assert_array_equal(d.gamma_correct(img, 2.0), np.full_like(img, 0.25))

    @given(st.floats(0.1, 5))
    def test_fixed_endpoints(self, g):
        img = np.array([[[0.0, 1.0]]], dtype=np.float32)
        np.testing.assert_array_equal(d.gamma_correct(img, g), img)


class TestOcclusion:
    def test_full_image(self):
        img = image(7)
        assert not d.occlude(img, 0, 0, 16, 16).any()

    def test_outside_untouched(self):
        img = image(7)
        out = d.occlude(img, 3, 4, 5, 6)
        mask = np.ones(img.shape, bool)
        mask[:, 4:10, 3:8] = False
        np.testing.assert_array_equal(out[mask], img[mask])
        assert not out[~mask].any()

    def test_centered_patch(self):
        assert d.centered_patch(32, 32, 0.25) == (8, 8, 16, 16)


class TestSpecs:
    def test_parse(self):
        s = d.parse_distortion("kind=gamma,gamma=0.5,seed=4")
        assert (s.kind, s.params, s.seed) == ("gamma", {"gamma": 0.5}, 4)
        assert d.parse_distortion("motion_blur").resolved() == {"length": 9, "angle": 0.0}

    @pytest.mark.parametrize("text", ["kind=sepia", "kind=gamma,sigma=2", "", "gamma=2"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            d.parse_distortion(text)

    def test_batch_streams(self):
        imgs = np.full((4, 1, 8, 8), 0.5, dtype=np.float32)
        spec = d.DistortionSpec("gaussian_noise", seed=3)
        a = d.apply_batch(imgs, spec)
        np.testing.assert_array_equal(a, d.apply_batch(imgs, spec))
        assert not np.array_equal(a[0], a[1])

    def test_suite(self):
        names = [s.label for s in d.table_suite()]
        assert names == [
            "motion_blur", "frosted_glass", "gaussian_blur", "gaussian_noise",
            "salt_pepper", "gamma_dark", "gamma_light", "occlusion",
        ]

    def test_apply_matches_direct_call(self):
        img = image(8)
        spec = d.DistortionSpec("occlusion", {"x": 1, "y": 2, "w": 3, "h": 4})
        np.testing.assert_array_equal(d.apply(img, spec), d.occlude(img, 1, 2, 3, 4))
