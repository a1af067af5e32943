"""Shared fixtures: seeded streams, tiny random models, synthetic MNIST files."""

import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from src.helpers.numerics import RngState
from src.models.coffee import CoffeeParams
from src.extractors.induction import IH0_LEARNED_EMBEDDING, ih0_params, ih0_table, ih0_vocab
from src.extractors.mnist_extractor import IDX_FILES, MNIST_IMAGE_MAGIC, MNIST_LABEL_MAGIC
from src.predictors.sequence_predictor import IHModel
from src.predictors.symbol_predictor import EmbeddingTable


@pytest.fixture
def rng() -> RngState:
    return RngState(1234)


def random_coffee(rng: RngState, n: int = 3, D: int = 4, output_filter: bool = False) -> CoffeeParams:
    return CoffeeParams(
        lam=-2.0 * rng.uniform((D, n)),
        C=rng.normal((D, n)),
        w_D=rng.normal((D, n)),
        w_gamma=rng.normal((D, n)) if output_filter else None,
    )


@pytest.fixture
def tiny_coffee(rng) -> CoffeeParams:
    return random_coffee(rng)


@pytest.fixture
def ih0_model() -> IHModel:
    return IHModel(
        vocab=ih0_vocab(),
        embedding=EmbeddingTable(ih0_table(IH0_LEARNED_EMBEDDING)),
        ssm=ih0_params(),
    )


def write_idx(path: Path, magic: int, array: np.ndarray, compress: bool = False) -> Path:
    header = struct.pack(">II", magic, array.shape[0])
    if magic == MNIST_IMAGE_MAGIC:
        header += struct.pack(">II", array.shape[1], array.shape[2])
    payload = header + array.astype(np.uint8).tobytes()
    if compress:
        path = path.with_name(path.name + ".gz")
        with gzip.open(path, "wb") as f:
            f.write(payload)
    else:
        path.write_bytes(payload)
    return path


def make_mnist_dir(directory: Path, n_train: int = 60, n_test: int = 20, seed: int = 0) -> Path:
    """
    Four IDX files with a learnable toy signal: the label sets the brightness
    of one 4-pixel-wide column band.
    """
    gen = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)

    def split(count):
        labels = gen.integers(0, 10, size=count).astype(np.uint8)
        images = gen.integers(0, 40, size=(count, 28, 28)).astype(np.uint8)
        for i, label in enumerate(labels):
            images[i, 4:24, 2 + 2 * label:4 + 2 * label] = 255
        return images, labels

    train_images, train_labels = split(n_train)
    test_images, test_labels = split(n_test)
    write_idx(directory / IDX_FILES["train_images"], MNIST_IMAGE_MAGIC, train_images, compress=True)
    write_idx(directory / IDX_FILES["train_labels"], MNIST_LABEL_MAGIC, train_labels, compress=True)
    write_idx(directory / IDX_FILES["test_images"], MNIST_IMAGE_MAGIC, test_images)
    write_idx(directory / IDX_FILES["test_labels"], MNIST_LABEL_MAGIC, test_labels)
    return directory


@pytest.fixture
def mnist_dir(tmp_path) -> Path:
    return make_mnist_dir(tmp_path / "mnist")
