import numpy as np
import pytest

from ctxseg import augment as A


class TestResize:
    def test_image_identity(self):
        img = np.random.default_rng(0).standard_normal((3, 5, 7))
        np.testing.assert_allclose(A.resize_image(img, 5, 7), img, atol=1e-12)

    def test_mask_identity(self):
        m = np.random.default_rng(1).integers(0, 4, (6, 6))
        np.testing.assert_array_equal(A.resize_mask(m, 6, 6), m)

    def test_mask_values_preserved(self):
        # nearest neighbor never invents labels
        m = np.random.default_rng(2).integers(0, 3, (9, 9)) * 7
        out = A.resize_mask(m, 17, 5)
        assert set(np.unique(out)) <= set(np.unique(m))

    def test_mask_double_then_subsample_roundtrip(self):
        m = np.random.default_rng(3).integers(0, 5, (4, 4))
        big = A.resize_mask(m, 7, 7)  # odd target: exact 2x-1 grid alignment
        np.testing.assert_array_equal(big[::2, ::2], m)


class TestRotate:
    def test_zero_angle_is_identity(self):
        img = np.random.default_rng(4).standard_normal((2, 6, 6))
        np.testing.assert_allclose(A.rotate_image(img, 0.0), img, atol=1e-12)
        m = np.random.default_rng(5).integers(0, 4, (6, 6))
        np.testing.assert_array_equal(A.rotate_mask(m, 0.0, 255), m)

    def test_center_pixel_fixed(self):
        img = np.zeros((1, 7, 7))
        img[0, 3, 3] = 1.0
        out = A.rotate_image(img, 10.0)
        assert abs(out[0, 3, 3] - 1.0) < 1e-6

    def test_ninety_degrees_on_symmetric_grid(self):
        m = np.zeros((5, 5), dtype=int)
        m[0, 2] = 3  # top center -> right center under -90 inverse mapping
        out = A.rotate_mask(m, 90.0, 255)
        assert out[2, 4] == 3

    def test_out_of_frame_mask_is_ignore(self):
        m = np.ones((8, 8), dtype=int)
        out = A.rotate_mask(m, 45.0, 255)
        assert out[0, 0] == 255  # corners leave the frame under 45 degrees

    def test_out_of_frame_image_is_zero(self):
        img = np.ones((1, 8, 8))
        out = A.rotate_image(img, 45.0)
        assert out[0, 0, 0] == 0.0

    def test_rotation_preserves_mean_roughly(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(0.4, 0.6, (1, 32, 32))
        out = A.rotate_image(img, 5.0)
        inside = out != 0
        assert abs(out[inside].mean() - img.mean()) < 0.05


class TestPadCrop:
    def test_pad_values(self):
        img = np.ones((2, 3, 3))
        m = np.zeros((3, 3), dtype=int)
        pi, pm = A.pad_to(img, m, 5, 255)
        assert pi.shape == (2, 5, 5) and pm.shape == (5, 5)
        assert pi[:, 3:, :].max() == 0.0
        assert (pm[3:, :] == 255).all()

    def test_no_pad_when_large_enough(self):
        img = np.ones((1, 6, 6))
        m = np.zeros((6, 6), dtype=int)
        pi, pm = A.pad_to(img, m, 4, 255)
        assert pi is img and pm is m

    def test_crop_is_window(self):
        rng = np.random.default_rng(7)
        img = rng.standard_normal((1, 10, 10))
        m = rng.integers(0, 3, (10, 10))
        ci, cm = A.random_crop(img, m, 4, np.random.default_rng(0))
        assert ci.shape == (1, 4, 4) and cm.shape == (4, 4)
        # the crop appears verbatim somewhere in the original
        found = any(np.array_equal(img[:, t:t + 4, l:l + 4], ci)
                    for t in range(7) for l in range(7))
        assert found


class TestPipeline:
    def _sample(self, seed=8, size=16):
        rng = np.random.default_rng(seed)
        return rng.standard_normal((3, size, size)), rng.integers(0, 5, (size, size))

    def test_output_shapes(self):
        img, m = self._sample()
        cfg = A.AugmentConfig(crop_size=12)
        ai, am = A.augment_sample(img, m, cfg, A.sample_rng(0, 0, 0))
        assert ai.shape == (3, 12, 12) and am.shape == (12, 12)

    def test_deterministic_per_key(self):
        img, m = self._sample()
        cfg = A.AugmentConfig(crop_size=12)
        a = A.augment_sample(img, m, cfg, A.sample_rng(1, 2, 3))
        b = A.augment_sample(img, m, cfg, A.sample_rng(1, 2, 3))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_different_epochs_differ(self):
        img, m = self._sample()
        cfg = A.AugmentConfig(crop_size=12)
        a = A.augment_sample(img, m, cfg, A.sample_rng(1, 0, 3))
        b = A.augment_sample(img, m, cfg, A.sample_rng(1, 1, 3))
        assert not np.array_equal(a[0], b[0])

    def test_mask_labels_stay_valid(self):
        img, m = self._sample()
        cfg = A.AugmentConfig(crop_size=24, ignore_label=255)
        for i in range(10):
            _, am = A.augment_sample(img, m, cfg, A.sample_rng(0, 0, i))
            assert set(np.unique(am)) <= set(range(5)) | {255}

    def test_identity_config_returns_crop_of_input(self):
        img, m = self._sample(size=8)
        cfg = A.AugmentConfig(crop_size=8, flip=False, scale_range=(1.0, 1.0),
                              rotate_deg=0.0)
        ai, am = A.augment_sample(img, m, cfg, A.sample_rng(0, 0, 0))
        np.testing.assert_allclose(ai, img, atol=1e-12)
        np.testing.assert_array_equal(am, m)
