"""
MNIST architectures.

Four-view model (25 x 25 crops, D = 25):

    rows -> SSM_0 ┐
    cols -> SSM_1 ├ last output of each (25) -> concat (100) -> affine 25 -> GELU -> affine 10
    rows reversed -> SSM_2 │
    cols reversed -> SSM_3 ┘

Sequential model (28 x 28, D = 1): column-major pixel stream -> SSM (n = 8)
-> GELU per position -> affine 784 -> 10. The ablation drops the SSM and
feeds GELU(pixels) straight to the affine layer.

Both models expose the same training surface as the induction-head model:
``tensors()``, ``loss_and_grads()``, ``evaluate()``, ``after_step()``.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

try:
    from src.helpers.numerics import ParamTensor, RngState, gelu, gelu_grad, init_affine
    from src.models.helpers import MNIST_HIDDEN, MNIST_SIDE, MNIST_VIEWS, N_CLASSES, SMNIST_LENGTH, stability_project
    from src.models.layers import cast_ssm, init_ssm, ssm_backward, ssm_forward
    from src.predictors.symbol_predictor import accuracy, cross_entropy, predict
    from src.extractors.mnist_extractor import vectorize_column_major
except ImportError:
    from helpers.numerics import ParamTensor, RngState, gelu, gelu_grad, init_affine
    from models.helpers import MNIST_HIDDEN, MNIST_SIDE, MNIST_VIEWS, N_CLASSES, SMNIST_LENGTH, stability_project
    from models.layers import cast_ssm, init_ssm, ssm_backward, ssm_forward
    from predictors.symbol_predictor import accuracy, cross_entropy, predict
    from extractors.mnist_extractor import vectorize_column_major

log = logging.getLogger(__name__)


# =============================================================================
# AFFINE HEAD
# =============================================================================

@dataclass
class Affine:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @classmethod
    def create(cls, rng: RngState, fan_in: int, fan_out: int, dtype=np.float64) -> "Affine":
        W, b = init_affine(rng, fan_in, fan_out)
        return cls(W.astype(dtype), b.astype(dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W.T + self.b

    def backward(self, x: np.ndarray, dy: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        return {"W": dy.T @ x, "b": dy.sum(axis=0)}, dy @ self.W


def mlp_head_forward(head1: Affine, head2: Affine, z: np.ndarray):
    """affine -> GELU -> affine. Returns (logits, cache)."""
    a = head1.forward(z)
    h = gelu(a)
    return head2.forward(h), (z, a, h)


def mlp_head_backward(head1: Affine, head2: Affine, cache, dlogits: np.ndarray):
    z, a, h = cache
    g2, dh = head2.backward(h, dlogits)
    da = dh * gelu_grad(a)
    g1, dz = head1.backward(z, da)
    grads = {f"head1.{k}": v for k, v in g1.items()}
    grads.update({f"head2.{k}": v for k, v in g2.items()})
    return grads, dz


# =============================================================================
# FOUR-VIEW MODEL
# =============================================================================

def mnist_views(images: np.ndarray) -> List[np.ndarray]:
    """
    Rows, columns, reversed rows, reversed columns of (N, 25, 25) images.

    Each view is an (N, 25, 25) batch of length-25 sequences of 25-vectors.
    """
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    cols = images.transpose(0, 2, 1)
    return [images, cols, images[:, ::-1, :], cols[:, ::-1, :]]


@dataclass
class MnistModel:
    layers: List[object]
    head1: Affine
    head2: Affine
    _tensors: Optional[Dict[str, ParamTensor]] = field(default=None, init=False, repr=False)

    @classmethod
    def create(
        cls,
        kind: str,
        n: int,
        rng: RngState,
        output_filter: bool = False,
        dtype=np.float64,
    ) -> "MnistModel":
        layers = []
        for _ in range(MNIST_VIEWS):
            layers.append(cast_ssm(init_ssm(kind, rng, n, MNIST_SIDE, output_filter=output_filter), dtype))
        return cls(
            layers=layers,
            head1=Affine.create(rng, MNIST_VIEWS * MNIST_SIDE, MNIST_HIDDEN, dtype),
            head2=Affine.create(rng, MNIST_HIDDEN, N_CLASSES, dtype),
        )

    @property
    def kind(self) -> str:
        return self.layers[0].kind

    @property
    def n(self) -> int:
        return self.layers[0].n

    def tensors(self) -> Dict[str, ParamTensor]:
        if self._tensors is None:
            out = {}
            for i, layer in enumerate(self.layers):
                for name, arr in layer.arrays().items():
                    out[f"layer{i}.{name}"] = ParamTensor(f"layer{i}.{name}", arr)
            for hname, head in (("head1", self.head1), ("head2", self.head2)):
                out[f"{hname}.W"] = ParamTensor(f"{hname}.W", head.W)
                out[f"{hname}.b"] = ParamTensor(f"{hname}.b", head.b)
            self._tensors = out
        return self._tensors

    def after_step(self) -> None:
        for layer in self.layers:
            if layer.kind == "coffee":
                stability_project(layer, inplace=True)

    def forward(self, images: np.ndarray):
        caches = [ssm_forward(layer, view) for layer, view in zip(self.layers, mnist_views(images))]
        z = np.concatenate([c.Y[:, -1, :] for c in caches], axis=1)
        logits, head_cache = mlp_head_forward(self.head1, self.head2, z)
        return logits, (caches, head_cache)

    def loss_and_grads(self, images: np.ndarray, labels: np.ndarray):
        logits, (caches, head_cache) = self.forward(images)
        loss, dlogits = cross_entropy(logits, labels)
        grads, dz = mlp_head_backward(self.head1, self.head2, head_cache, dlogits)
        for i, (layer, cache) in enumerate(zip(self.layers, caches)):
            dY = np.zeros_like(cache.Y)
            dY[:, -1, :] = dz[:, i * MNIST_SIDE:(i + 1) * MNIST_SIDE]
            g, _ = ssm_backward(layer, cache, dY)
            grads.update({f"layer{i}.{k}": v for k, v in g.items()})
        return loss, grads, predict(logits)

    def evaluate(self, images: np.ndarray, labels: np.ndarray, chunk: int = 2048) -> Tuple[float, float]:
        return _evaluate_chunks(self, images, labels, chunk)


def mnist_forward(model: MnistModel, image: np.ndarray) -> np.ndarray:
    """10 logits for a single 25 x 25 image."""
    image = np.asarray(image)
    if image.shape != (MNIST_SIDE, MNIST_SIDE):
        raise ValueError(f"Expected a {MNIST_SIDE} x {MNIST_SIDE} image, got {image.shape}")
    logits, _ = model.forward(image[None])
    return logits[0]


# =============================================================================
# SEQUENTIAL MODEL
# =============================================================================

@dataclass
class SmnistModel:
    layer: Optional[object]  # None: GELU + affine ablation
    head: Affine
    _tensors: Optional[Dict[str, ParamTensor]] = field(default=None, init=False, repr=False)

    @classmethod
    def create(
        cls,
        kind: str = "coffee",
        n: int = 8,
        rng: Optional[RngState] = None,
        use_ssm: bool = True,
        dtype=np.float64,
    ) -> "SmnistModel":
        rng = rng or RngState(0)
        layer = None
        if use_ssm:
            layer = cast_ssm(init_ssm(kind, rng, n, 1), dtype)
        return cls(layer=layer, head=Affine.create(rng, SMNIST_LENGTH, N_CLASSES, dtype))

    @property
    def kind(self) -> str:
        return self.layer.kind if self.layer is not None else "none"

    def tensors(self) -> Dict[str, ParamTensor]:
        if self._tensors is None:
            out = {}
            if self.layer is not None:
                for name, arr in self.layer.arrays().items():
                    out[f"layer.{name}"] = ParamTensor(f"layer.{name}", arr)
            out["head.W"] = ParamTensor("head.W", self.head.W)
            out["head.b"] = ParamTensor("head.b", self.head.b)
            self._tensors = out
        return self._tensors

    def after_step(self) -> None:
        if self.layer is not None and self.layer.kind == "coffee":
            stability_project(self.layer, inplace=True)

    def forward(self, images: np.ndarray):
        seq = vectorize_column_major(np.asarray(images).reshape(-1, 28, 28))
        cache = None
        pre = seq
        if self.layer is not None:
            cache = ssm_forward(self.layer, seq[..., None])
            pre = cache.Y[..., 0]
        h = gelu(pre)
        return self.head.forward(h), (cache, pre, h)

    def loss_and_grads(self, images: np.ndarray, labels: np.ndarray):
        logits, (cache, pre, h) = self.forward(images)
        loss, dlogits = cross_entropy(logits, labels)
        g_head, dh = self.head.backward(h, dlogits)
        grads = {f"head.{k}": v for k, v in g_head.items()}
        if self.layer is not None:
            dY = (dh * gelu_grad(pre))[..., None]
            g, _ = ssm_backward(self.layer, cache, dY)
            grads.update({f"layer.{k}": v for k, v in g.items()})
        return loss, grads, predict(logits)

    def evaluate(self, images: np.ndarray, labels: np.ndarray, chunk: int = 1024) -> Tuple[float, float]:
        return _evaluate_chunks(self, images, labels, chunk)


def smnist_forward(model: SmnistModel, image: np.ndarray) -> np.ndarray:
    """10 logits for a single 28 x 28 image."""
    logits, _ = model.forward(np.asarray(image)[None])
    return logits[0]


def _evaluate_chunks(model, images: np.ndarray, labels: np.ndarray, chunk: int) -> Tuple[float, float]:
    total, preds = 0.0, []
    for start in range(0, len(labels), chunk):
        rows = slice(start, start + chunk)
        logits, _ = model.forward(images[rows])
        total += cross_entropy(logits, labels[rows])[0] * len(labels[rows])
        preds.append(predict(logits))
    preds = np.concatenate(preds)
    return total / len(labels), accuracy(preds[:, None], np.asarray(labels)[:, None], "per-position")
