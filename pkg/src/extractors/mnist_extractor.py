"""
MNIST ingestion and augmentation.

- IDX parsing (big-endian headers; images magic 2051, labels magic 2049),
  plain or gzip-compressed
- 50 000 / 10 000 / 10 000 train / val / test split with a seeded shuffle of
  the original training set
- 28 x 28 -> 25 x 25 crop (rows and columns 1..25)
- Random roto-translation: uniform rotation in +-5 degrees and uniform
  per-axis shift in +-1% of the image side, bilinear, zero fill
- Column-major vectorization for the sequential (784-step) variant

Pixels stay uint8 in memory; ``MnistSplit.pixels`` scales a selection to
[0, 1] by /255 on the way out.

Example:
    >>> data = mnist_load(os.environ['COFFEE_MNIST_DIR'], seed=0)
    >>> len(data.train), len(data.val), len(data.test)
    (50000, 10000, 10000)
"""

import gzip
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.ndimage import affine_transform

try:
    from src.helpers.numerics import RngState
except ImportError:
    from helpers.numerics import RngState

log = logging.getLogger(__name__)

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
MNIST_DIR_ENV = "COFFEE_MNIST_DIR"
VAL_SIZE = 10_000
CROP_START = 1
CROP_SIZE = 25

IDX_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class MnistFormatError(ValueError):
    """Bad magic number, truncated payload or inconsistent counts."""


# =============================================================================
# IDX PARSING
# =============================================================================

def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path: Union[str, Path], expected_magic: int) -> np.ndarray:
    """
    Parse one IDX file into a uint8 array.

    Args:
        path: File path (.gz allowed)
        expected_magic: 2051 for images, 2049 for labels

    Returns:
        (count, rows, cols) for images, (count,) for labels

    Raises:
        MnistFormatError: On magic mismatch or truncated data
    """
    path = Path(path)
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise MnistFormatError(f"{path.name}: file too short for an IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise MnistFormatError(f"{path.name}: magic number {magic}, expected {expected_magic}")
    if magic == MNIST_IMAGE_MAGIC:
        if len(raw) < 16:
            raise MnistFormatError(f"{path.name}: truncated image header")
        rows, cols = struct.unpack(">II", raw[8:16])
        shape, offset = (count, rows, cols), 16
    else:
        shape, offset = (count,), 8
    needed = int(np.prod(shape))
    payload = raw[offset:]
    if len(payload) < needed:
        raise MnistFormatError(f"{path.name}: truncated, {len(payload)} of {needed} bytes present")
    return np.frombuffer(payload, dtype=np.uint8, count=needed).reshape(shape)


def find_idx_file(directory: Path, stem: str) -> Path:
    """Locate ``stem`` in ``directory`` under its usual spellings."""
    candidates = [stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"]
    for name in candidates:
        path = directory / name
        if path.exists():
            return path
    raise FileNotFoundError(
        f"MNIST file '{stem}' not found in {directory}. "
        f"Download the four IDX files there or set {MNIST_DIR_ENV}."
    )


def resolve_mnist_dir(path: Optional[Union[str, Path]] = None) -> Path:
    path = path or os.environ.get(MNIST_DIR_ENV)
    if not path:
        raise FileNotFoundError(f"No MNIST directory given; pass a path or set {MNIST_DIR_ENV}")
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"MNIST directory {path} does not exist")
    return path


# =============================================================================
# SPLITS
# =============================================================================

@dataclass
class MnistSplit:
    images: np.ndarray  # uint8 (N, 28, 28)
    labels: np.ndarray  # uint8 (N,)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def pixels(self, index=slice(None), dtype=np.float64) -> np.ndarray:
        return self.images[index].astype(dtype) / 255.0


@dataclass
class MnistData:
    train: MnistSplit
    val: MnistSplit
    test: MnistSplit


def load_pair(images_path: Path, labels_path: Path) -> MnistSplit:
    images = read_idx(images_path, MNIST_IMAGE_MAGIC)
    labels = read_idx(labels_path, MNIST_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise MnistFormatError(
            f"{images_path.name} has {images.shape[0]} images but "
            f"{labels_path.name} has {labels.shape[0]} labels"
        )
    if labels.size and labels.max() > 9:
        raise MnistFormatError(f"{labels_path.name}: label {labels.max()} outside 0-9")
    return MnistSplit(images=images, labels=labels)


def mnist_load(
    path: Optional[Union[str, Path]] = None,
    seed: int = 0,
    val_size: int = VAL_SIZE
) -> MnistData:
    """
    Load MNIST and carve a validation split out of the training set.

    Args:
        path: Directory with the four IDX files (default: $COFFEE_MNIST_DIR)
        seed: Seed of the train/val shuffle
        val_size: Images moved from train to val

    Returns:
        MnistData with train / val / test splits

    Raises:
        FileNotFoundError: Directory or files missing
        MnistFormatError: Corrupt files
    """
    directory = resolve_mnist_dir(path)
    full = load_pair(
        find_idx_file(directory, IDX_FILES["train_images"]),
        find_idx_file(directory, IDX_FILES["train_labels"]),
    )
    test = load_pair(
        find_idx_file(directory, IDX_FILES["test_images"]),
        find_idx_file(directory, IDX_FILES["test_labels"]),
    )
    if val_size >= len(full):
        raise ValueError(f"val_size={val_size} leaves no training images out of {len(full)}")
    order = RngState(seed).generator.permutation(len(full))
    val_idx, train_idx = order[:val_size], order[val_size:]
    log.info("MNIST: %d train / %d val / %d test", train_idx.size, val_idx.size, len(test))
    return MnistData(
        train=MnistSplit(full.images[train_idx], full.labels[train_idx]),
        val=MnistSplit(full.images[val_idx], full.labels[val_idx]),
        test=test,
    )


# =============================================================================
# IMAGE TRANSFORMS
# =============================================================================

def crop_25(image: np.ndarray) -> np.ndarray:
    """Keep rows and columns 1..25 of a 28 x 28 image (or a batch of them)."""
    image = np.asarray(image)
    if image.shape[-2:] != (28, 28):
        raise ValueError(f"crop_25 expects 28 x 28 images, got {image.shape}")
    end = CROP_START + CROP_SIZE
    return image[..., CROP_START:end, CROP_START:end]


@dataclass(frozen=True)
class AugmentConfig:
    max_rotation_deg: float = 5.0
    max_translate_frac: float = 0.01
    enabled: bool = True
    seed: int = 0


def roto_translate(image: np.ndarray, angle_deg: float, shift: Tuple[float, float]) -> np.ndarray:
    """
    Rotate about the image centre, then translate by (dy, dx) pixels.

    Bilinear interpolation, zero outside the source, result clamped to [0, 1].
    """
    image = np.asarray(image, dtype=float)
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    inverse = np.array([[c, s], [-s, c]])
    centre = (np.array(image.shape, dtype=float) - 1.0) / 2.0
    offset = centre - inverse @ (centre + np.asarray(shift, dtype=float))
    out = affine_transform(image, inverse, offset=offset, order=1, mode="constant", cval=0.0, prefilter=False)
    return np.clip(out, 0.0, 1.0)


def augment(image: np.ndarray, config: AugmentConfig, rng: RngState) -> np.ndarray:
    """One random roto-translation drawn from ``config``; identity when disabled."""
    if not config.enabled:
        return np.array(image, dtype=float, copy=True)
    H, W = image.shape
    angle = (2.0 * rng.uniform() - 1.0) * config.max_rotation_deg
    dy = (2.0 * rng.uniform() - 1.0) * config.max_translate_frac * H
    dx = (2.0 * rng.uniform() - 1.0) * config.max_translate_frac * W
    return roto_translate(image, float(angle), (float(dy), float(dx)))


def augment_batch(images: np.ndarray, config: AugmentConfig, rng: RngState) -> np.ndarray:
    if not config.enabled:
        return np.asarray(images, dtype=float).copy()
    return np.stack([augment(img, config, rng) for img in images])


def vectorize_column_major(images: np.ndarray) -> np.ndarray:
    """(N, H, W) -> (N, H*W) with pixel (r, c) at position c*H + r."""
    images = np.asarray(images)
    N, H, W = images.shape
    return images.transpose(0, 2, 1).reshape(N, H * W)
