"""Training data: a seeded synthetic corpus and random crops from image folders."""

import logging
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from rpn.errors import ConfigError

log = logging.getLogger(__name__)

# held-out split: same generator, disjoint seed
TEST_SPLIT_SEED = 10_000
TEST_SPLIT_SIZE = 24

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def _synthetic_image(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((size, size, 3))
    for c in range(3):
        base = rng.uniform(0.2, 0.8)
        ramp = rng.uniform(-0.4, 0.4) * xx + rng.uniform(-0.4, 0.4) * yy
        fx, fy = rng.uniform(0.5, 3.0, size=2)
        wave = 0.1 * np.sin(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
        img[..., c] = base + ramp + wave
    for _ in range(rng.integers(2, 7)):
        h, w = rng.integers(size // 8, size // 2, size=2)
        top, left = rng.integers(0, size - h), rng.integers(0, size - w)
        alpha = rng.uniform(0.5, 1.0)
        color = rng.uniform(0, 1, size=3)
        patch = img[top:top + h, left:left + w]
        img[top:top + h, left:left + w] = (1 - alpha) * patch + alpha * color
    sigma = rng.uniform(0.7, 2.0)
    noise = gaussian_filter(rng.normal(size=(size, size, 3)), sigma=(sigma, sigma, 0))
    noise *= rng.uniform(0.03, 0.1) / (noise.std() + 1e-12)
    return np.clip(img + noise, 0.0, 1.0)


def make_synthetic_corpus(n, size, seed):
    """n uint8 RGB images (n, size, size, 3): smooth gradients, rectangles, band-limited noise."""
    if size % 16:
        raise ConfigError(f"image size {size} is not divisible by 16")
    rng = np.random.default_rng(seed)
    return np.stack([
        np.round(_synthetic_image(rng, size) * 255).astype(np.uint8) for _ in range(n)
    ])


def to_unit(images):
    """uint8 HWC (or NHWC) -> float32 in [0, 1]."""
    return np.asarray(images, dtype=np.float32) / 255.0


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(path, image):
    """Write an HWC array in [0, 1] (float) or uint8 as PNG/PPM, chosen by suffix."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def ingest_directory(path, crop, seed):
    """Endless iterator of seeded random ``crop`` x ``crop`` uint8 crops from a folder.

    Images smaller than the crop are skipped with a warning; if nothing usable
    remains a ConfigError lists the skipped files.
    """
    root = Path(path)
    if not root.is_dir():
        raise ConfigError(f"image directory {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ConfigError(f"no images found in {root}")
    images, skipped = [], []
    for f in files:
        img = load_image(f)
        if img.shape[0] < crop or img.shape[1] < crop:
            log.warning("skipping %s: %dx%d is smaller than crop %d", f, img.shape[0],
                        img.shape[1], crop)
            skipped.append(f.name)
        else:
            images.append(img)
    if not images:
        raise ConfigError(f"all images are smaller than crop {crop}: {', '.join(skipped)}")
    return _random_crops(images, crop, np.random.default_rng(seed))


def _random_crops(images, crop, rng):
    while True:
        img = images[rng.integers(len(images))]
        top = rng.integers(img.shape[0] - crop + 1)
        left = rng.integers(img.shape[1] - crop + 1)
        yield img[top:top + crop, left:left + crop]
