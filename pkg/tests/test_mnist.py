import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.helpers.numerics import RngState
from src.models.mnist import MnistModel, SmnistModel, mnist_forward, mnist_views, smnist_forward
from src.extractors.mnist_extractor import (
    IDX_FILES,
    MNIST_DIR_ENV,
    MNIST_IMAGE_MAGIC,
    MNIST_LABEL_MAGIC,
    AugmentConfig,
    MnistFormatError,
    augment,
    augment_batch,
    crop_25,
    mnist_load,
    read_idx,
    resolve_mnist_dir,
    roto_translate,
    vectorize_column_major,
)
from src.training import ModelConfig, TrainConfig, head_grad_check, model_grad_check, train_mnist, train_smnist
from src.utils.presets import build_run_config

from conftest import write_idx


def _size(model) -> int:
    return sum(t.value.size for t in model.tensors().values())


# -----------------------------------------------------------------------------
# IDX FILES
# -----------------------------------------------------------------------------

def test_read_idx_images_and_labels(tmp_path) -> None:
    images = np.arange(2 * 28 * 28, dtype=np.uint8).reshape(2, 28, 28)
    path = write_idx(tmp_path / "img", MNIST_IMAGE_MAGIC, images)
    assert_allclose(read_idx(path, MNIST_IMAGE_MAGIC), images)
    labels = write_idx(tmp_path / "lab", MNIST_LABEL_MAGIC, np.array([3, 7]), compress=True)
    assert read_idx(labels, MNIST_LABEL_MAGIC).tolist() == [3, 7]


def test_read_idx_wrong_magic(tmp_path) -> None:
    path = write_idx(tmp_path / "lab", MNIST_LABEL_MAGIC, np.array([1]))
    with pytest.raises(MnistFormatError, match="magic"):
        read_idx(path, MNIST_IMAGE_MAGIC)


def test_read_idx_truncated(tmp_path) -> None:
    path = write_idx(tmp_path / "img", MNIST_IMAGE_MAGIC, np.zeros((3, 28, 28)))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(MnistFormatError, match="truncated"):
        read_idx(path, MNIST_IMAGE_MAGIC)
    path.write_bytes(b"\x00\x00")
    with pytest.raises(MnistFormatError, match="too short"):
        read_idx(path, MNIST_IMAGE_MAGIC)


def test_mnist_load_splits(mnist_dir) -> None:
    data = mnist_load(mnist_dir, seed=0, val_size=20)
    assert len(data.train) == 40 and len(data.val) == 20 and len(data.test) == 20
    assert data.train.images.shape[1:] == (28, 28)


def test_mnist_load_split_depends_on_seed(mnist_dir) -> None:
    a = mnist_load(mnist_dir, seed=0, val_size=20)
    b = mnist_load(mnist_dir, seed=1, val_size=20)
    assert not np.array_equal(a.val.images, b.val.images)


def test_mnist_load_count_mismatch(mnist_dir) -> None:
    write_idx(mnist_dir / IDX_FILES["test_labels"], MNIST_LABEL_MAGIC, np.zeros(5))
    with pytest.raises(MnistFormatError, match="labels"):
        mnist_load(mnist_dir, val_size=20)


def test_missing_directory_is_actionable(monkeypatch, tmp_path) -> None:
    monkeypatch.delenv(MNIST_DIR_ENV, raising=False)
    with pytest.raises(FileNotFoundError, match=MNIST_DIR_ENV):
        resolve_mnist_dir()
    with pytest.raises(FileNotFoundError, match=MNIST_DIR_ENV):
        mnist_load(tmp_path)


def test_environment_variable_locates_the_data(monkeypatch, mnist_dir) -> None:
    monkeypatch.setenv(MNIST_DIR_ENV, str(mnist_dir))
    assert resolve_mnist_dir() == mnist_dir


# -----------------------------------------------------------------------------
# TRANSFORMS
# -----------------------------------------------------------------------------

def test_crop_drops_the_border() -> None:
    image = np.arange(28 * 28, dtype=float).reshape(28, 28)
    crop = crop_25(image)
    assert crop.shape == (25, 25)
    assert crop[0, 0] == image[1, 1]
    assert crop[-1, -1] == image[25, 25]
    with pytest.raises(ValueError):
        crop_25(np.zeros((25, 25)))


def test_identity_roto_translation() -> None:
    image = RngState(0).uniform((28, 28))
    assert_allclose(roto_translate(image, 0.0, (0.0, 0.0)), image, atol=1e-12)


def test_integer_translation_moves_pixels() -> None:
    image = np.zeros((28, 28))
    image[10, 10] = 1.0
    moved = roto_translate(image, 0.0, (2.0, -1.0))
    assert moved[12, 9] == pytest.approx(1.0)


def test_augmentation_stays_in_range_and_is_seeded() -> None:
    images = RngState(1).uniform((3, 28, 28))
    cfg = AugmentConfig()
    a = augment_batch(images, cfg, RngState(5))
    b = augment_batch(images, cfg, RngState(5))
    assert_allclose(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_disabled_augmentation_is_identity() -> None:
    image = RngState(1).uniform((28, 28))
    assert_allclose(augment(image, AugmentConfig(enabled=False), RngState(0)), image)


def test_column_major_vectorization() -> None:
    images = np.arange(2 * 3 * 4).reshape(2, 3, 4)
    flat = vectorize_column_major(images)
    r, c = 2, 1
    assert flat[1, c * 3 + r] == images[1, r, c]


def test_four_views() -> None:
    image = np.arange(9).reshape(1, 3, 3)
    rows, cols, rows_rev, cols_rev = mnist_views(image)
    assert_allclose(cols[0], image[0].T)
    assert_allclose(rows_rev[0, 0], image[0, 2])
    assert_allclose(cols_rev[0, 0], image[0, :, 2])
    assert_allclose(rows[0], image[0])


# -----------------------------------------------------------------------------
# MODELS
# -----------------------------------------------------------------------------

@pytest.mark.parametrize(
    "kind, n, output_filter, expected",
    [("coffee", 2, False, 3385), ("coffee", 2, True, 3585), ("s6", 2, False, 5885), ("s6", 16, False, 10085)],
)
def test_mnist_model_sizes(kind, n, output_filter, expected) -> None:
    model = MnistModel.create(kind, n, RngState(0), output_filter=output_filter)
    assert _size(model) == expected


def test_smnist_model_sizes() -> None:
    assert _size(SmnistModel.create("coffee", 8, RngState(0))) == 7874
    assert _size(SmnistModel.create("coffee", 8, RngState(0), use_ssm=False)) == 7850


def test_single_image_forward_matches_batch() -> None:
    model = MnistModel.create("coffee", 2, RngState(0))
    images = RngState(1).uniform((2, 25, 25))
    logits, _ = model.forward(images)
    assert_allclose(mnist_forward(model, images[1]), logits[1], atol=1e-12)
    with pytest.raises(ValueError):
        mnist_forward(model, np.zeros((28, 28)))

    seq_model = SmnistModel.create("coffee", 4, RngState(0))
    raw = RngState(2).uniform((2, 28, 28))
    seq_logits, _ = seq_model.forward(raw)
    assert_allclose(smnist_forward(seq_model, raw[0]), seq_logits[0], atol=1e-12)


def test_mnist_head_gradients() -> None:
    for seed in range(3):
        assert head_grad_check(seed=seed).passed


@pytest.mark.parametrize("kind, output_filter", [("coffee", False), ("coffee", True), ("s6", False)])
def test_mnist_model_gradients(kind, output_filter) -> None:
    model = MnistModel.create(kind, 2, RngState(3), output_filter=output_filter)
    if output_filter:
        for layer in model.layers:
            layer.w_gamma[...] = RngState(4).normal(layer.w_gamma.shape)
    images = RngState(5).uniform((2, 25, 25))
    report = model_grad_check(model, images, np.array([3, 8]), label=f"mnist {kind}", max_entries=8)
    assert report.passed, report.summary()


@pytest.mark.parametrize("use_ssm", [True, False])
def test_smnist_model_gradients(use_ssm) -> None:
    model = SmnistModel.create("coffee", 3, RngState(3), use_ssm=use_ssm)
    images = RngState(6).uniform((2, 28, 28)) * 0.1
    report = model_grad_check(model, images, np.array([1, 4]), label="smnist", max_entries=8)
    assert report.passed, report.summary()


# -----------------------------------------------------------------------------
# TRAINING
# -----------------------------------------------------------------------------

def _tiny_train(**overrides) -> TrainConfig:
    settings = dict(batch_size=20, max_epochs=2, eval_size=20, early_stop_accuracy=None, log_every=1, seed=0)
    settings.update(overrides)
    return TrainConfig(**settings)


def test_train_mnist_writes_run_directory(mnist_dir, tmp_path) -> None:
    data = mnist_load(mnist_dir, seed=0, val_size=20)
    out = tmp_path / "run"
    result = train_mnist(
        ModelConfig(kind="coffee", n=2, D=25), _tiny_train(), data=data,
        out_dir=out, progress=False, deterministic=True,
    )
    assert result.epochs_run == 2
    assert (out / "checkpoint-best.json").exists() and (out / "checkpoint-last.json").exists()
    splits = result.metrics["split"].tolist()
    assert splits == ["train", "eval", "train", "eval", "test"]
    assert 0.0 <= result.test[1] <= 1.0
    assert (result.metrics["wall_ms"] == 0).all()


def test_train_smnist_ablation(mnist_dir) -> None:
    data = mnist_load(mnist_dir, seed=0, val_size=20)
    result = train_smnist(
        ModelConfig(kind="coffee", n=2, D=1, use_ssm=False), _tiny_train(max_epochs=1),
        augment=AugmentConfig(enabled=False), data=data, progress=False,
    )
    assert result.model.kind == "none"
    assert result.test is not None


@pytest.mark.slow
def test_mnist_desk_scale(tmp_path) -> None:
    if not os.environ.get(MNIST_DIR_ENV):
        pytest.skip(f"{MNIST_DIR_ENV} not set")
    run = build_run_config("smoke-mnist")
    result = train_mnist(run.model, run.train, augment=run.augment, out_dir=tmp_path, progress=False)
    assert result.test[1] > 0.80
