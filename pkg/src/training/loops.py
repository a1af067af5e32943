"""
Training loops.

``fit`` is the shared epoch loop: fresh batches from ``next_batch``, one
Adam step per batch, an evaluation after every epoch, the best-by-accuracy
checkpoint kept (and written when an output directory is given), early stop
once the eval accuracy reaches the configured target.

Task entry points:
- ``train_ih``: induction head, freshly generated sequences every step,
  10 000-sequence eval set from an independent stream
- ``train_mnist``: four-view model on augmented 25 x 25 crops, validation
  per epoch, final test on the best checkpoint
- ``train_smnist``: column-major pixel stream, optional no-SSM ablation
- ``train_ih0``: only the six embedding entries of the IH0 integrator

Run directory layout: config.json (written by the CLI), checkpoint-best.json,
checkpoint-last.json, metrics.csv, log.txt.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

try:
    from src.helpers.numerics import RngState
    from src.models.coffee import LAMBDA_MAX, LAMBDA_MIN
    from src.models.mnist import MnistModel, SmnistModel
    from src.predictors.sequence_predictor import IHModel
    from src.predictors.symbol_predictor import EmbeddingTable, Vocab, accuracy
    from src.extractors.induction import (
        IHConfig, IH0_INITIAL_EMBEDDING, gen_ih_batch, ih0_dataset, ih0_params, ih0_table, ih0_vocab,
    )
    from src.extractors.mnist_extractor import AugmentConfig, MnistData, augment_batch, crop_25, mnist_load
    from src.training.backward import backward
    from src.training.checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint, save_checkpoint
    from src.training.config import ModelConfig, TrainConfig
    from src.training.optimizer import AdamState, LRSchedule, adam_step, optimizer_step
except ImportError:
    from helpers.numerics import RngState
    from models.coffee import LAMBDA_MAX, LAMBDA_MIN
    from models.mnist import MnistModel, SmnistModel
    from predictors.sequence_predictor import IHModel
    from predictors.symbol_predictor import EmbeddingTable, Vocab, accuracy
    from extractors.induction import (
        IHConfig, IH0_INITIAL_EMBEDDING, gen_ih_batch, ih0_dataset, ih0_params, ih0_table, ih0_vocab,
    )
    from extractors.mnist_extractor import AugmentConfig, MnistData, augment_batch, crop_25, mnist_load
    from training.backward import backward
    from training.checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint, save_checkpoint
    from training.config import ModelConfig, TrainConfig
    from training.optimizer import AdamState, LRSchedule, adam_step, optimizer_step

log = logging.getLogger(__name__)

# eval stream seed = train seed XOR this
EVAL_SEED_XOR = 0x5EED_E7A1
METRIC_COLUMNS = ["epoch", "step", "split", "loss", "accuracy", "lr", "wall_ms"]


# =============================================================================
# METRICS
# =============================================================================

@dataclass
class MetricsLog:
    """Metrics rows. ``deterministic`` records wall_ms as 0 so reruns compare equal."""
    deterministic: bool = False
    rows: List[Dict[str, Any]] = field(default_factory=list)
    start: float = field(default_factory=time.perf_counter)

    def add(self, epoch: int, step: int, split: str, loss: float, acc: float, lr: float) -> Dict[str, Any]:
        wall = 0 if self.deterministic else int(round((time.perf_counter() - self.start) * 1000))
        row = {
            "epoch": int(epoch), "step": int(step), "split": split,
            "loss": float(loss), "accuracy": float(acc), "lr": float(lr), "wall_ms": wall,
        }
        self.rows.append(row)
        return row

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=METRIC_COLUMNS)

    def write_csv(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False)


@dataclass
class TrainResult:
    model: Any
    best_checkpoint: Optional[Checkpoint]
    last_checkpoint: Optional[Checkpoint]
    metrics: pd.DataFrame
    best_accuracy: float
    best_epoch: int
    epochs_run: int
    test: Optional[Tuple[float, float]] = None
    out_dir: Optional[Path] = None


def _assert_stable(model) -> None:
    for name, tensor in model.tensors().items():
        if name.endswith("lambda") and getattr(model, "kind", None) == "coffee":
            if tensor.value.min() < LAMBDA_MIN or tensor.value.max() > LAMBDA_MAX:
                raise AssertionError(f"'{name}' left [{LAMBDA_MIN}, {LAMBDA_MAX}] after a step")


# =============================================================================
# SHARED LOOP
# =============================================================================

def fit(
    model,
    next_batch: Callable[[int, int], Tuple[np.ndarray, Any]],
    evaluate: Callable[[Any], Tuple[float, float]],
    batch_accuracy: Callable[[np.ndarray, Any], float],
    train: TrainConfig,
    steps_per_epoch: int,
    out_dir: Optional[Path] = None,
    config_snapshot: Optional[Dict[str, Any]] = None,
    seeds: Optional[Dict[str, int]] = None,
    desc: str = "train",
    progress: bool = True,
    deterministic: bool = False,
) -> TrainResult:
    """
    Epoch loop shared by every task.

    Args:
        model: Anything with ``tensors``, ``loss_and_grads``, ``after_step``
        next_batch: (epoch, step) -> (inputs, targets)
        evaluate: model -> (loss, accuracy) on the held-out set
        batch_accuracy: (predictions, targets) -> training accuracy
        train: Optimizer, schedule and stopping settings
        steps_per_epoch: Optimizer steps between evaluations
        out_dir: Run directory for checkpoints and metrics.csv
        deterministic: Force a single gradient shard and zero wall_ms

    Returns:
        TrainResult with the final model and the best checkpoint
    """
    threads = 1 if deterministic else train.threads
    adam = AdamState(lr=train.lr)
    schedule = LRSchedule(train.lr, train.lr_drop)
    metrics = MetricsLog(deterministic=deterministic)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    best_acc, best_epoch, best_ckpt, last_ckpt = -math.inf, 0, None, None
    global_step, epoch = 0, 0
    debug = log.isEnabledFor(logging.DEBUG)

    for epoch in range(1, train.max_epochs + 1):
        losses, accs = [], []
        bar = tqdm(
            range(steps_per_epoch), desc=f"{desc} epoch {epoch}", colour="green",
            leave=False, disable=None if progress else True,
        )
        for step in bar:
            inputs, targets = next_batch(epoch, step)
            result = backward(model, inputs, targets, threads=threads, clip_norm=train.clip_norm)
            optimizer_step(model, adam)
            adam.lr = schedule.update(result.loss)
            global_step += 1
            losses.append(result.loss)
            accs.append(batch_accuracy(result.predictions, targets))
            if debug:
                _assert_stable(model)
            if global_step % train.log_every == 0:
                bar.set_postfix(loss=f"{np.mean(losses[-train.log_every:]):.4f}", lr=adam.lr)
                log.debug("step %d loss %.5f |g| %.3g", global_step, result.loss, result.grad_norm)

        train_loss, train_acc = float(np.mean(losses)), float(np.mean(accs))
        metrics.add(epoch, global_step, "train", train_loss, train_acc, adam.lr)
        eval_loss, eval_acc = evaluate(model)
        metrics.add(epoch, global_step, "eval", eval_loss, eval_acc, adam.lr)
        log.info(
            "%s epoch %d: train loss %.4f acc %.4f | eval loss %.4f acc %.4f | lr %g",
            desc, epoch, train_loss, train_acc, eval_loss, eval_acc, adam.lr,
        )

        last_ckpt = checkpoint_from_model(model, adam, config_snapshot, list(metrics.rows), seeds)
        if eval_acc > best_acc:
            best_acc, best_epoch, best_ckpt = eval_acc, epoch, last_ckpt
        if out_dir is not None:
            save_checkpoint(last_ckpt, out_dir / "checkpoint-last.json")
            if best_epoch == epoch:
                save_checkpoint(best_ckpt, out_dir / "checkpoint-best.json")
            metrics.write_csv(out_dir / "metrics.csv")

        if train.early_stop_accuracy is not None and eval_acc >= train.early_stop_accuracy:
            log.info("Eval accuracy %.4f reached %.4f after epoch %d, stopping", eval_acc, train.early_stop_accuracy, epoch)
            break

    return TrainResult(
        model=model,
        best_checkpoint=best_ckpt,
        last_checkpoint=last_ckpt,
        metrics=metrics.to_frame(),
        best_accuracy=float(best_acc),
        best_epoch=best_epoch,
        epochs_run=epoch,
        out_dir=out_dir,
    )


def _snapshot(task: str, model: ModelConfig, train: TrainConfig, **sections) -> Dict[str, Any]:
    out = {"task": task, "model": model.to_dict(), "train": train.to_dict()}
    for name, value in sections.items():
        out[name] = asdict(value) if hasattr(value, "__dataclass_fields__") else value
    return out


# =============================================================================
# INDUCTION HEAD
# =============================================================================

def ih_model_vocab(model: ModelConfig, ih: IHConfig) -> Vocab:
    """{0, ..., vocab_size - 1} holding the pad symbol and the task alphabet."""
    return Vocab(symbols=tuple(range(model.vocab_size)), alphabet=ih.alphabet)


def train_ih(
    model: ModelConfig,
    ih: IHConfig,
    train: TrainConfig,
    out_dir: Optional[Path] = None,
    progress: bool = True,
    deterministic: bool = False,
    dtype=np.float64,
    config_snapshot: Optional[Dict[str, Any]] = None,
) -> TrainResult:
    """
    Train on freshly generated induction-head batches.

    Streams: model init ``seed + 0``, training data ``seed + 1``, trigger
    ``seed + 2``, evaluation ``seed ^ EVAL_SEED_XOR``.
    """
    root = RngState(train.seed)
    ih = ih.with_trigger(root.split(2))
    vocab = ih_model_vocab(model, ih)
    net = IHModel.create(
        model.kind, model.n, model.D, vocab, root.split(0),
        output_filter=model.output_filter, squared_distance=model.squared_distance, dtype=dtype,
    )
    log.info(
        "IH: %s n=%d D=%d |M|=%d, L_seq=%d L_tri=%d L_tar=%d, trigger %s",
        model.kind, model.n, model.D, len(vocab), ih.L_seq, ih.L_tri, ih.L_tar, ih.trigger,
    )

    eval_seed = train.seed ^ EVAL_SEED_XOR
    eval_tokens, eval_target = gen_ih_batch(ih, RngState(eval_seed), train.eval_size).encoded(vocab)
    train_rng = root.split(1)

    def next_batch(epoch: int, step: int):
        return gen_ih_batch(ih, train_rng, train.batch_size).encoded(vocab)

    return fit(
        net,
        next_batch=next_batch,
        evaluate=lambda m: m.evaluate(eval_tokens, eval_target, mode="per-sequence"),
        batch_accuracy=lambda preds, target: accuracy(preds, target.targets, "per-sequence"),
        train=train,
        steps_per_epoch=train.steps_per_epoch,
        out_dir=out_dir,
        config_snapshot=config_snapshot or _snapshot("ih", model, train, ih=ih),
        seeds={"train": train.seed, "eval": eval_seed},
        desc=f"ih-{model.kind}",
        progress=progress,
        deterministic=deterministic,
    )


# =============================================================================
# MNIST
# =============================================================================

def _labels_accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(preds == labels))


def _record_test(result: TrainResult) -> None:
    """Append the test row to the metrics frame (and metrics.csv)."""
    last = result.metrics.iloc[-1]
    row = {
        "epoch": result.best_epoch, "step": int(last["step"]), "split": "test",
        "loss": result.test[0], "accuracy": result.test[1], "lr": float(last["lr"]), "wall_ms": int(last["wall_ms"]),
    }
    result.metrics = pd.concat([result.metrics, pd.DataFrame([row])], ignore_index=True)
    if result.out_dir is not None:
        result.metrics.to_csv(result.out_dir / "metrics.csv", index=False)


def _image_batches(images, labels, train: TrainConfig, rng: RngState, transform):
    """Reshuffled every epoch; the last batch of an epoch may be short."""
    state = {}

    def next_batch(epoch: int, step: int):
        if step == 0:
            state["order"] = rng.generator.permutation(len(labels))
        idx = state["order"][step * train.batch_size:(step + 1) * train.batch_size]
        return transform(images[idx]), labels[idx].astype(np.int64)

    return next_batch


def _limit(split, limit: Optional[int]):
    if limit is None:
        return split.images, split.labels
    return split.images[:limit], split.labels[:limit]


def train_mnist(
    model: ModelConfig,
    train: TrainConfig,
    augment: AugmentConfig = AugmentConfig(),
    data: Optional[MnistData] = None,
    data_dir: Optional[Path] = None,
    out_dir: Optional[Path] = None,
    progress: bool = True,
    deterministic: bool = False,
    dtype=np.float64,
    config_snapshot: Optional[Dict[str, Any]] = None,
) -> TrainResult:
    """
    Four-view model on the 50 000-image train split with random
    roto-translations; best model by validation accuracy, reported on test.
    """
    data = data or mnist_load(data_dir, seed=train.seed)
    root = RngState(train.seed)
    net = MnistModel.create(model.kind, model.n, root.split(0), output_filter=model.output_filter, dtype=dtype)
    aug_rng = RngState(augment.seed).split(train.seed)

    images, labels = _limit(data.train, train.train_limit)
    val_images = crop_25(data.val.images[:train.eval_size].astype(dtype) / 255.0)
    val_labels = data.val.labels[:train.eval_size].astype(np.int64)

    def transform(batch: np.ndarray) -> np.ndarray:
        pixels = batch.astype(dtype) / 255.0
        return crop_25(augment_batch(pixels, augment, aug_rng)).astype(dtype)

    result = fit(
        net,
        next_batch=_image_batches(images, labels, train, root.split(1), transform),
        evaluate=lambda m: m.evaluate(val_images, val_labels),
        batch_accuracy=_labels_accuracy,
        train=train,
        steps_per_epoch=math.ceil(len(labels) / train.batch_size),
        out_dir=out_dir,
        config_snapshot=config_snapshot or _snapshot("mnist", model, train, augment=augment),
        seeds={"train": train.seed, "augment": aug_rng.seed},
        desc=f"mnist-{model.kind}",
        progress=progress,
        deterministic=deterministic,
    )
    best = model_from_checkpoint(result.best_checkpoint, dtype=dtype)
    test_images = crop_25(data.test.images.astype(dtype) / 255.0)
    result.test = best.evaluate(test_images, data.test.labels.astype(np.int64))
    log.info("MNIST test (best epoch %d): loss %.4f acc %.4f", result.best_epoch, *result.test)
    _record_test(result)
    return result


def train_smnist(
    model: ModelConfig,
    train: TrainConfig,
    augment: AugmentConfig = AugmentConfig(),
    data: Optional[MnistData] = None,
    data_dir: Optional[Path] = None,
    out_dir: Optional[Path] = None,
    progress: bool = True,
    deterministic: bool = False,
    dtype=np.float64,
    config_snapshot: Optional[Dict[str, Any]] = None,
) -> TrainResult:
    """
    Sequential MNIST (784 steps, D = 1) with the same roto-translations.
    ``model.use_ssm=False`` is the GELU + linear ablation.
    """
    data = data or mnist_load(data_dir, seed=train.seed)
    root = RngState(train.seed)
    net = SmnistModel.create(model.kind, model.n, root.split(0), use_ssm=model.use_ssm, dtype=dtype)
    aug_rng = RngState(augment.seed).split(train.seed)

    def transform(batch: np.ndarray) -> np.ndarray:
        return augment_batch(batch.astype(dtype) / 255.0, augment, aug_rng).astype(dtype)

    images, labels = _limit(data.train, train.train_limit)
    val_images = data.val.images[:train.eval_size].astype(dtype) / 255.0
    val_labels = data.val.labels[:train.eval_size].astype(np.int64)

    result = fit(
        net,
        next_batch=_image_batches(images, labels, train, root.split(1), transform),
        evaluate=lambda m: m.evaluate(val_images, val_labels),
        batch_accuracy=_labels_accuracy,
        train=train,
        steps_per_epoch=math.ceil(len(labels) / train.batch_size),
        out_dir=out_dir,
        config_snapshot=config_snapshot or _snapshot("smnist", model, train, augment=augment),
        seeds={"train": train.seed, "augment": aug_rng.seed},
        desc=f"smnist-{net.kind}",
        progress=progress,
        deterministic=deterministic,
    )
    best = model_from_checkpoint(result.best_checkpoint, dtype=dtype)
    result.test = best.evaluate(data.test.images.astype(dtype) / 255.0, data.test.labels.astype(np.int64))
    log.info("sMNIST test (best epoch %d): loss %.4f acc %.4f", result.best_epoch, *result.test)
    _record_test(result)
    return result


# =============================================================================
# IH0
# =============================================================================

@dataclass
class IH0Result:
    model: IHModel
    steps: int
    loss: float
    accuracy: float
    history: pd.DataFrame

    @property
    def embedding(self) -> Dict[int, Tuple[float, float]]:
        table = self.model.embedding.table
        return {s: (float(table[i, 0]), float(table[i, 1])) for i, s in enumerate(self.model.vocab.symbols)}


def train_ih0(
    initial: Optional[Dict[int, Tuple[float, float]]] = None,
    lr: float = 0.05,
    max_steps: int = 2000,
    extra_steps: int = 0,
) -> IH0Result:
    """
    Optimize only the 3 x 2 embedding of the fixed IH0 integrator on all 8
    sequences until every one is classified correctly.

    Args:
        initial: Starting embedding (default: [6, 6], [-10, -1], [-1, -10])
        lr: Adam learning rate
        max_steps: Step budget
        extra_steps: Steps to keep going after reaching 100%

    Returns:
        IH0Result; ``accuracy`` is 1.0 unless the budget ran out
    """
    vocab = ih0_vocab()
    model = IHModel(
        vocab=vocab,
        embedding=EmbeddingTable(ih0_table(initial or IH0_INITIAL_EMBEDDING)),
        ssm=ih0_params(),
    )
    tokens, target = ih0_dataset(vocab)
    embedding = {"embedding": model.tensors()["embedding"]}
    adam = AdamState(lr=lr)
    rows, solved_at = [], None

    step = 0
    loss, acc = model.evaluate(tokens, target)
    rows.append({"step": 0, "loss": loss, "accuracy": acc})
    if acc == 1.0:
        solved_at = 0
    while step < max_steps and (solved_at is None or step < solved_at + extra_steps):
        loss, grads, _ = model.loss_and_grads(tokens, target)
        embedding["embedding"].grad[...] = grads["embedding"]
        adam_step(adam, embedding)
        step += 1
        loss, acc = model.evaluate(tokens, target)
        rows.append({"step": step, "loss": loss, "accuracy": acc})
        if acc == 1.0 and solved_at is None:
            solved_at = step
            log.info("IH0 solved after %d steps (loss %.4f)", step, loss)

    if solved_at is None:
        log.warning("IH0 not solved within %d steps (accuracy %.3f)", max_steps, acc)
    return IH0Result(model=model, steps=step, loss=loss, accuracy=acc, history=pd.DataFrame(rows))
