"""
Batch gradients for any model exposing ``loss_and_grads``.

The batch is split into contiguous shards, one per worker thread. Each shard
computes its own batch-mean loss and gradients against the read-only
parameters; shard results are then weighted by shard size and summed in
shard order, so the reduction is the same whichever thread finishes first.
With ``threads=1`` the whole batch is one shard.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

try:
    from src.predictors.symbol_predictor import PredictionTarget
except ImportError:
    from predictors.symbol_predictor import PredictionTarget

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    """A gradient entry is NaN or infinite."""

    def __init__(self, name: str):
        super().__init__(f"Non-finite gradient for parameter '{name}'")
        self.name = name


@dataclass
class BackwardResult:
    loss: float
    predictions: np.ndarray
    grad_norm: float
    clipped: bool = False


def shard_bounds(count: int, shards: int) -> List[slice]:
    shards = max(1, min(shards, count))
    sizes = [count // shards + (1 if s < count % shards else 0) for s in range(shards)]
    out, start = [], 0
    for size in sizes:
        out.append(slice(start, start + size))
        start += size
    return out


def _take(targets, rows: slice):
    if isinstance(targets, PredictionTarget):
        return targets.subset(rows)
    return targets[rows]


def backward(
    model,
    inputs: np.ndarray,
    targets,
    threads: int = 1,
    clip_norm: Optional[float] = None,
    **options,
) -> BackwardResult:
    """
    Fill ``grad`` of every model tensor with the batch-mean loss gradient.

    Args:
        model: IHModel, MnistModel or SmnistModel
        inputs: Token rows or images, batch along axis 0
        targets: PredictionTarget (IH) or label array
        threads: Worker shards
        clip_norm: Rescale to this global norm if exceeded (debug)
        **options: Passed to ``model.loss_and_grads``

    Returns:
        BackwardResult with the batch-mean loss and predictions

    Raises:
        NonFiniteGradientError: Naming the first offending parameter
    """
    count = len(inputs)
    bounds = shard_bounds(count, threads)

    def run(rows: slice):
        return model.loss_and_grads(inputs[rows], _take(targets, rows), **options)

    if len(bounds) == 1:
        results = [run(bounds[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
            results = list(pool.map(run, bounds))

    tensors = model.tensors()
    for tensor in tensors.values():
        tensor.zero_grad()

    loss = 0.0
    for rows, (shard_loss, grads, _) in zip(bounds, results):
        weight = (rows.stop - rows.start) / count
        loss += weight * shard_loss
        for name, g in grads.items():
            tensors[name].accumulate(weight * g)

    for name, tensor in tensors.items():
        if not np.all(np.isfinite(tensor.grad)):
            raise NonFiniteGradientError(name)

    norm = float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in tensors.values())))
    clipped = False
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
        for tensor in tensors.values():
            tensor.grad *= scale
        clipped = True
        log.debug("Gradient norm %.4g clipped to %.4g", norm, clip_norm)

    preds = np.concatenate([p for _, _, p in results], axis=0)
    return BackwardResult(loss=float(loss), predictions=preds, grad_norm=norm, clipped=clipped)
