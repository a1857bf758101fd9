import struct

import numpy as np
import pytest

from blflab.data import (
    Dataset,
    IdxFormatError,
    load_idx,
    save_idx,
    subset_and_batch,
    synth_blobs,
    take_subset,
)
from blflab.losses import LossSpec
from blflab.nn.layers import Dense, ReLU
from blflab.nn.model import Model
from blflab.nn.train import TrainConfig, train


def write_idx_fixture(tmp_path, pixels, labels, prefix="a"):
    """Hand-built big-endian IDX pair with known byte values."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    img = tmp_path / f"{prefix}-imgs.idx3"
    lab = tmp_path / f"{prefix}-labs.idx1"
    with open(img, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(lab, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(bytes(labels))
    return str(img), str(lab)


class TestIdx:
    def test_two_image_fixture_recovers_exact_pixels(self, tmp_path):
        pixels = np.array(
            [[[0, 128], [255, 1]], [[7, 0], [0, 200]]], dtype=np.uint8
        )
        img, lab = write_idx_fixture(tmp_path, pixels, [3, 9])
        ds = load_idx(img, lab)
        assert ds.images.shape == (2, 1, 2, 2)
        np.testing.assert_array_equal(ds.images, pixels[:, None, :, :] / 255.0)
        np.testing.assert_array_equal(ds.labels, [3, 9])
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_image_magic_fed_as_labels(self, tmp_path):
        pixels = np.zeros((1, 2, 2), dtype=np.uint8)
        img, _ = write_idx_fixture(tmp_path, pixels, [0])
        with pytest.raises(IdxFormatError, match="bad magic"):
            load_idx(img, img)

    def test_truncated_payload(self, tmp_path):
        img, lab = write_idx_fixture(tmp_path, np.zeros((2, 3, 3), dtype=np.uint8), [0, 1])
        data = open(img, "rb").read()
        with open(img, "wb") as fh:
            fh.write(data[:-5])
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, _ = write_idx_fixture(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1], prefix="two")
        _, lab3 = write_idx_fixture(tmp_path, np.zeros((3, 2, 2), dtype=np.uint8), [0, 1, 2], prefix="three")
        with pytest.raises(IdxFormatError, match="count mismatch"):
            load_idx(img, lab3)

    def test_roundtrip_bit_exact(self, tmp_path):
        pixels = np.random.default_rng(0).integers(0, 256, size=(5, 4, 4)).astype(np.uint8)
        img, lab = write_idx_fixture(tmp_path, pixels, [0, 1, 2, 3, 4])
        ds = load_idx(img, lab)
        img2, lab2 = str(tmp_path / "i2"), str(tmp_path / "l2")
        save_idx(ds, img2, lab2)
        again = load_idx(img2, lab2)
        np.testing.assert_array_equal(ds.images, again.images)
        np.testing.assert_array_equal(ds.labels, again.labels)


class TestBlobs:
    def test_zero_spread_gives_constant_points(self):
        ds = synth_blobs(2, 5, 4, spread=0.0, seed=0)
        for c in range(2):
            block = ds.images[ds.labels == c]
            assert np.all(block == block[0])
        assert not np.array_equal(ds.images[0], ds.images[-1])

    def test_seeded_determinism(self):
        a = synth_blobs(3, 10, 8, seed=42)
        b = synth_blobs(3, 10, 8, seed=42)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_pixels_in_unit_interval(self):
        ds = synth_blobs(4, 20, 6, spread=0.5, seed=1)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            synth_blobs(1, 5, 4)

    def test_image_shape_option(self):
        ds = synth_blobs(2, 3, 49, image_shape=(1, 7, 7), seed=2)
        assert ds.images.shape == (6, 1, 7, 7)

    def test_ten_class_blobs_are_learnable(self):
        ds = synth_blobs(10, 100, 64, spread=0.05, seed=0)
        rng = np.random.default_rng(0)
        model = Model([Dense(64, 32, rng=rng), ReLU(), Dense(32, 10, rng=rng)])
        result = train(model, ds.images, ds.labels, TrainConfig(loss=LossSpec("ce"), epochs=20, seed=0))
        assert result.epochs[-1].train_accuracy >= 0.99


class TestBatching:
    def test_full_subset_is_permutation(self):
        ds = synth_blobs(2, 10, 4, seed=3)
        batches = list(subset_and_batch(ds, len(ds), len(ds), seed=0))
        assert len(batches) == 1
        x, y = batches[0]
        order = np.lexsort(x.T)
        base = np.lexsort(ds.images.T)
        np.testing.assert_array_equal(x[order], ds.images[base])

    def test_same_seed_same_sequence(self):
        ds = synth_blobs(3, 20, 5, seed=4)
        seq_a = [(x.copy(), y.copy()) for x, y in subset_and_batch(ds, 50, 16, seed=9)]
        seq_b = [(x.copy(), y.copy()) for x, y in subset_and_batch(ds, 50, 16, seed=9)]
        for (xa, ya), (xb, yb) in zip(seq_a, seq_b):
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)

    def test_partial_final_batch(self):
        ds = synth_blobs(2, 500, 4, seed=5)
        batches = list(subset_and_batch(ds, 1000, 64, seed=0))
        assert len(batches) == 16
        assert batches[-1][0].shape[0] == 40

    def test_oversized_request_rejected(self):
        ds = synth_blobs(2, 5, 4, seed=6)
        with pytest.raises(ValueError):
            list(subset_and_batch(ds, 11, 4))
        with pytest.raises(ValueError):
            take_subset(ds, 11)

    def test_take_subset_deterministic(self):
        ds = synth_blobs(2, 20, 4, seed=7)
        a = take_subset(ds, 10, seed=1)
        b = take_subset(ds, 10, seed=1)
        np.testing.assert_array_equal(a.images, b.images)


class TestDatasetInvariants:
    def test_label_count_checked(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 4)), np.zeros(2, dtype=np.int64))

    def test_num_classes(self):
        ds = synth_blobs(4, 2, 3, seed=8)
        assert ds.num_classes == 4
