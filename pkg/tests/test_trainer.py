import numpy as np
import pytest

from ctxseg import networks as N
from ctxseg import trainer as T
from ctxseg.augment import AugmentConfig


def tiny_backbone():
    return N.BackboneConfig(stage_widths=(4, 8, 8, 8), blocks_per_stage=(1, 1, 1, 1),
                            stem_width=4)


def seg_data(n, seed=0, size=16, num_classes=4):
    rng = np.random.default_rng(seed)
    images = rng.standard_normal((n, 3, size, size)).astype(np.float32)
    masks = rng.integers(0, num_classes, (n, size, size))
    return images, masks


class TestEpochBatches:
    def test_discards_incomplete_batch(self):
        batches = list(T.epoch_batches(10, 4, np.random.default_rng(0)))
        assert len(batches) == 2
        assert all(len(b) == 4 for b in batches)

    def test_exact_division_keeps_all(self):
        batches = list(T.epoch_batches(8, 4, np.random.default_rng(0)))
        assert sorted(np.concatenate(batches)) == list(range(8))

    def test_oversized_batch_rejected(self):
        with pytest.raises(ValueError, match="batch size"):
            list(T.epoch_batches(3, 4, np.random.default_rng(0)))

    def test_shuffle_depends_on_rng(self):
        a = list(T.epoch_batches(8, 4, np.random.default_rng(1)))
        b = list(T.epoch_batches(8, 4, np.random.default_rng(1)))
        np.testing.assert_array_equal(a[0], b[0])


class TestSegTraining:
    def run(self, out, seed=0, **kw):
        model = N.build_fcn(tiny_backbone(), num_classes=4, seed=seed,
                            dtype=np.float32)
        kwargs = dict(num_classes=4, epochs=2, batch_size=2, base_lr=0.05,
                      out_dir=out, seed=seed)
        kwargs.update(kw)
        return T.train_segmentation(model, seg_data(6), seg_data(4, seed=9), **kwargs)

    def test_produces_csv_and_checkpoint(self, tmp_path):
        history, ckpt = self.run(tmp_path)
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == T.CSV_HEADER
        assert len(lines) == 3  # header + one row per epoch
        assert ckpt.exists() and ckpt.with_suffix(".ckpt.json").exists()
        assert len(history) == 2

    def test_byte_identical_reruns(self, tmp_path):
        self.run(tmp_path / "a")
        self.run(tmp_path / "b")
        assert (tmp_path / "a/metrics.csv").read_bytes() == \
            (tmp_path / "b/metrics.csv").read_bytes()
        assert (tmp_path / "a/model.ckpt").read_bytes() == \
            (tmp_path / "b/model.ckpt").read_bytes()

    def test_different_seed_differs(self, tmp_path):
        self.run(tmp_path / "a", seed=0)
        self.run(tmp_path / "b", seed=1)
        assert (tmp_path / "a/model.ckpt").read_bytes() != \
            (tmp_path / "b/model.ckpt").read_bytes()

    def test_encnet_logs_se_loss(self, tmp_path):
        cfg = N.EncNetConfig(backbone=tiny_backbone(), num_classes=4, codewords=2)
        model = N.build_encnet(cfg, dtype=np.float32)
        T.train_segmentation(model, seg_data(4), seg_data(2, seed=9),
                             num_classes=4, epochs=1, batch_size=2, base_lr=0.05,
                             out_dir=tmp_path)
        row = (tmp_path / "metrics.csv").read_text().splitlines()[1].split(",")
        assert row[4] != ""  # se_loss populated

    def test_augmentation_path_runs(self, tmp_path):
        history, _ = self.run(tmp_path, augment_cfg=AugmentConfig(crop_size=16))
        assert np.isfinite(history[-1]["total_loss"])

    def test_syncbn_events_logged(self, tmp_path):
        history, _ = self.run(tmp_path, syncbn_devices=2)
        row = (tmp_path / "metrics.csv").read_text().splitlines()[1].split(",")
        events = int(row[9])
        assert events > 0 and events % 2 == 0  # one forward + one backward each

    def test_divergence_aborts_with_snapshot(self, tmp_path):
        model = N.build_fcn(tiny_backbone(), num_classes=4, dtype=np.float32)
        model.classifier.weight.data[:] = np.nan
        with pytest.raises(T.TrainingDiverged, match="epoch 0"):
            T.train_segmentation(model, seg_data(4), seg_data(2, seed=9),
                                 num_classes=4, epochs=1, batch_size=2,
                                 base_lr=0.05, out_dir=tmp_path)
        assert (tmp_path / "diverged.ckpt").exists()

    def test_loss_decreases_on_learnable_data(self, tmp_path):
        # masks derived from the input: constant label per image by channel mean
        rng = np.random.default_rng(3)
        images = rng.standard_normal((8, 3, 16, 16)).astype(np.float32)
        labels = (images.mean(axis=(1, 2, 3)) > 0).astype(int)
        masks = np.broadcast_to(labels[:, None, None], (8, 16, 16)).copy()
        model = N.build_fcn(tiny_backbone(), num_classes=2, dtype=np.float32)
        history, _ = T.train_segmentation(model, (images, masks), (images, masks),
                                          num_classes=2, epochs=5, batch_size=4,
                                          base_lr=0.05, out_dir=tmp_path)
        assert history[-1]["total_loss"] < history[0]["total_loss"]


class TestCifarTraining:
    def data(self, n, seed=0):
        rng = np.random.default_rng(seed)
        images = rng.standard_normal((n, 3, 32, 32)).astype(np.float32)
        labels = rng.integers(0, 10, n)
        return images, labels

    def run(self, out, seed=0, **kw):
        model = N.build_cifar_net(
            N.CifarNetConfig(variant="plain", width=4), seed=seed,
            dtype=np.float32)
        kwargs = dict(epochs=2, batch_size=4, base_lr=0.05, out_dir=out,
                      seed=seed, augment=True)
        kwargs.update(kw)
        return T.train_cifar(model, self.data(8), self.data(4, seed=9), **kwargs)

    def test_produces_outputs(self, tmp_path):
        history, ckpt = self.run(tmp_path)
        assert ckpt.exists()
        assert len(history) == 2
        assert 0.0 <= history[-1]["accuracy"] <= 1.0
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == T.CSV_HEADER

    def test_byte_identical_reruns(self, tmp_path):
        self.run(tmp_path / "a")
        self.run(tmp_path / "b")
        assert (tmp_path / "a/metrics.csv").read_bytes() == \
            (tmp_path / "b/metrics.csv").read_bytes()
        assert (tmp_path / "a/model.ckpt").read_bytes() == \
            (tmp_path / "b/model.ckpt").read_bytes()

    def test_cosine_lr_logged_decreasing(self, tmp_path):
        history, _ = self.run(tmp_path)
        assert history[1]["lr"] < history[0]["lr"]


class TestCifarAugment:
    def test_shapes_and_determinism(self):
        batch = np.random.default_rng(0).standard_normal((4, 3, 32, 32)) \
            .astype(np.float32)
        a = T._cifar_augment(batch, np.random.default_rng(5))
        b = T._cifar_augment(batch, np.random.default_rng(5))
        assert a.shape == batch.shape
        np.testing.assert_array_equal(a, b)

    def test_values_come_from_input_or_padding(self):
        batch = np.ones((2, 3, 32, 32), dtype=np.float32)
        out = T._cifar_augment(batch, np.random.default_rng(1))
        assert set(np.unique(out)) <= {0.0, 1.0}
