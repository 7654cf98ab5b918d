import hashlib
import logging

import numpy as np
import pytest

from rpn.data import (
    TEST_SPLIT_SEED,
    TEST_SPLIT_SIZE,
    ingest_directory,
    load_image,
    make_synthetic_corpus,
    save_image,
    to_unit,
)
from rpn.errors import ConfigError

# digests of the corpora used by the desk-scale training run and its test split
TRAIN_DIGEST = "1b4faf92b9d9496ebbdeee6e4379e6a9bd3c89320b0b2fdaba8b8fcebcf98c00"
TEST_DIGEST = "6f6977fd408b78d7e5a9ef3422667b31756238c38a20bc9a40b0ddba6734e1f5"


def _entropy_bits(channel):
    counts = np.bincount(channel.ravel(), minlength=256)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


class TestSyntheticCorpus:
    def test_pinned_digests(self):
        train = make_synthetic_corpus(512, 64, 0)
        test = make_synthetic_corpus(TEST_SPLIT_SIZE, 64, TEST_SPLIT_SEED)
        assert hashlib.sha256(train.tobytes()).hexdigest() == TRAIN_DIGEST
        assert hashlib.sha256(test.tobytes()).hexdigest() == TEST_DIGEST

    def test_same_seed_same_bytes(self):
        a = make_synthetic_corpus(8, 32, 5)
        b = make_synthetic_corpus(8, 32, 5)
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != make_synthetic_corpus(8, 32, 6).tobytes()

    def test_range_and_shape(self):
        corpus = make_synthetic_corpus(8, 64, 1)
        assert corpus.shape == (8, 64, 64, 3) and corpus.dtype == np.uint8
        unit = to_unit(corpus)
        assert unit.min() >= 0.0 and unit.max() <= 1.0

    def test_entropy_above_one_bit(self):
        for img in make_synthetic_corpus(64, 64, 0):
            assert min(_entropy_bits(img[..., c]) for c in range(3)) > 1.0

    def test_unaligned_size(self):
        with pytest.raises(ConfigError):
            make_synthetic_corpus(1, 40, 0)


class TestIngest:
    def _write(self, root, sizes):
        rng = np.random.default_rng(0)
        for i, (h, w) in enumerate(sizes):
            save_image(root / f"img{i}.png", rng.integers(0, 256, (h, w, 3), dtype=np.uint8))

    def test_identity_crop(self, tmp_path):
        self._write(tmp_path, [(64, 64)])
        crop = next(ingest_directory(tmp_path, 64, 0))
        assert np.array_equal(crop, load_image(tmp_path / "img0.png"))

    def test_seeded_positions(self, tmp_path):
        self._write(tmp_path, [(100, 90), (80, 120)])
        a, b = ingest_directory(tmp_path, 32, 3), ingest_directory(tmp_path, 32, 3)
        for _ in range(10):
            assert np.array_equal(next(a), next(b))

    def test_small_images_skipped_with_warning(self, tmp_path, caplog):
        self._write(tmp_path, [(16, 16), (64, 64)])
        with caplog.at_level(logging.WARNING):
            crop = next(ingest_directory(tmp_path, 32, 0))
        assert crop.shape == (32, 32, 3)
        assert "img0.png" in caplog.text

    def test_all_too_small(self, tmp_path):
        self._write(tmp_path, [(16, 16), (20, 8)])
        with pytest.raises(ConfigError, match="img0.png, img1.png"):
            ingest_directory(tmp_path, 32, 0)

    def test_missing_or_empty_directory(self, tmp_path):
        with pytest.raises(ConfigError):
            ingest_directory(tmp_path / "nope", 32, 0)
        with pytest.raises(ConfigError):
            ingest_directory(tmp_path, 32, 0)

    def test_image_io_round_trip(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, (5, 7, 3), dtype=np.uint8)
        for suffix in (".png", ".ppm"):
            save_image(tmp_path / f"a{suffix}", img)
            assert np.array_equal(load_image(tmp_path / f"a{suffix}"), img)
