"""
Dataset ingestion and synthetic test images.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from octave_codec.exceptions import ConfigError, DatasetError, FormatError
from octave_codec.images import read_image, resize_bilinear

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".ppm", ".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

SYNTHETIC_KINDS = ("gradient", "stripes", "disk", "checker")


@dataclass
class NamedImage:
    name: str
    image: np.ndarray


def list_images(directory: Union[str, Path]) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(directory: Union[str, Path], min_size: int = 1) -> list[NamedImage]:
    """Read every image in `directory`; unreadable or undersized files are skipped with a warning."""
    images = []
    for path in list_images(directory):
        try:
            image = read_image(path)
        except (OSError, FormatError) as e:
            logger.warning(f"Skipping unreadable image {path}: {e}")
            continue
        if min(image.shape[1:]) < min_size:
            logger.warning(f"Skipping {path}: {image.shape[2]}x{image.shape[1]} is smaller than {min_size}")
            continue
        images.append(NamedImage(path.name, image))
    if not images:
        raise DatasetError(f"no usable images in {directory}")
    logger.info(f"Loaded {len(images)} images from {directory}")
    return images


def load_training_set(directory: Union[str, Path], size: int) -> np.ndarray:
    """N x 3 x size x size array of images resized bilinearly."""
    images = load_images(directory, min_size=size)
    return np.stack([resize_bilinear(item.image, size) for item in images])


def synthetic_image(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One (3, size, size) test pattern with random colours and geometry."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    a, b = rng.uniform(0.0, 1.0, size=(2, 3, 1, 1))
    if kind == "gradient":
        angle = rng.uniform(0.0, 2.0 * np.pi)
        t = (np.cos(angle) * xx + np.sin(angle) * yy + 1.5) / 3.0
    elif kind == "stripes":
        period = rng.uniform(4.0, size / 2.0) / size
        t = 0.5 + 0.5 * np.sin(2.0 * np.pi * xx / period + rng.uniform(0.0, 2.0 * np.pi))
    elif kind == "disk":
        cy, cx = rng.uniform(0.25, 0.75, size=2)
        radius = rng.uniform(0.1, 0.4)
        t = (((yy - cy) ** 2 + (xx - cx) ** 2) < radius**2).astype(np.float64)
    elif kind == "checker":
        cells = int(rng.integers(2, 9))
        t = ((np.floor(yy * cells * 0.999) + np.floor(xx * cells * 0.999)) % 2).astype(np.float64)
    else:
        raise ConfigError(f"unknown synthetic image kind {kind!r}")
    image = a + (b - a) * t[None]
    return np.clip(image, 0.0, 1.0)


def synthetic_images(count: int, size: int, seed: int = 0) -> np.ndarray:
    """`count` patterns cycling through SYNTHETIC_KINDS; deterministic under `seed`."""
    rng = np.random.default_rng(seed)
    return np.stack([synthetic_image(SYNTHETIC_KINDS[i % len(SYNTHETIC_KINDS)], size, rng) for i in range(count)])
