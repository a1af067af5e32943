"""
Finite-difference gradient checks.

Every learnable entry (or a random sample of entries for large tensors) is
perturbed by +-h and the central difference of the batch-mean loss is
compared with the analytic gradient. The error per tensor is

    max |analytic - numeric| / max(1, |analytic|)

and a check passes when every tensor stays under ``tol``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd

try:
    from src.helpers.numerics import ParamTensor, RngState
    from src.models.layers import init_ssm
    from src.models.mnist import Affine, mlp_head_backward, mlp_head_forward
    from src.predictors.sequence_predictor import IHModel
    from src.predictors.symbol_predictor import EmbeddingTable, PredictionTarget, Vocab, cross_entropy
except ImportError:
    from helpers.numerics import ParamTensor, RngState
    from models.layers import init_ssm
    from models.mnist import Affine, mlp_head_backward, mlp_head_forward
    from predictors.sequence_predictor import IHModel
    from predictors.symbol_predictor import EmbeddingTable, PredictionTarget, Vocab, cross_entropy

log = logging.getLogger(__name__)

FD_STEP = 1e-5
GRAD_TOL = 1e-4
HEAD_TOL = 1e-5


@dataclass
class GradCheckReport:
    label: str
    errors: Dict[str, float] = field(default_factory=dict)
    tol: float = GRAD_TOL

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"parameter": list(self.errors), "max_rel_error": list(self.errors.values())}
        ).assign(passed=lambda df: df["max_rel_error"] < self.tol)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.label}: max rel err {self.max_error:.3e} (tol {self.tol:.0e}) {status}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))


def check_tensors(
    loss_fn: Callable[[], float],
    tensors: Dict[str, ParamTensor],
    analytic: Dict[str, np.ndarray],
    h: float = FD_STEP,
    max_entries: Optional[int] = None,
    rng: Optional[RngState] = None,
) -> Dict[str, float]:
    """
    Central differences of ``loss_fn`` w.r.t. entries of ``tensors``.

    ``loss_fn`` must read the tensors' current values. Tensors are restored
    after each probe.
    """
    rng = rng or RngState(0)
    errors = {}
    for name, tensor in tensors.items():
        flat = tensor.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.generator.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            saved = flat[i]
            flat[i] = saved + h
            up = loss_fn()
            flat[i] = saved - h
            down = loss_fn()
            flat[i] = saved
            numeric[j] = (up - down) / (2.0 * h)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    return errors


def _tiny_ih_model(kind: str, n: int, D: int, vocab_size: int, rng: RngState, output_filter: bool) -> IHModel:
    vocab = Vocab(symbols=tuple(range(vocab_size)), alphabet=tuple(range(1, vocab_size)))
    ssm = init_ssm(kind, rng, n, D, output_filter=output_filter)
    if kind == "s6":
        ssm.mu[...] = rng.normal(ssm.mu.shape) * 0.5
    else:
        # strictly inside (-2, 0) so the projection never touches a probe
        ssm.lam[...] = -0.2 - 1.6 * rng.uniform(ssm.lam.shape)
    if output_filter:
        ssm.w_gamma[...] = rng.normal(ssm.w_gamma.shape)
    table = rng.normal((vocab_size, D))
    return IHModel(vocab=vocab, embedding=EmbeddingTable(table), ssm=ssm)


def grad_check(
    kind: str = "coffee",
    n: int = 3,
    D: int = 4,
    L: int = 8,
    vocab_size: int = 5,
    seed: int = 0,
    batch: int = 3,
    supervised: int = 2,
    output_filter: bool = False,
    h: float = FD_STEP,
    tol: float = GRAD_TOL,
) -> GradCheckReport:
    """
    Check the full induction-head pipeline (embedding -> SSM -> distance head
    -> cross-entropy) of a random tiny model in 64-bit.
    """
    rng = RngState(seed)
    model = _tiny_ih_model(kind, n, D, vocab_size, rng, output_filter)
    tokens = rng.integers(0, vocab_size, size=(batch, L))
    positions = np.arange(L - supervised, L)
    target = PredictionTarget(positions, rng.integers(0, vocab_size, size=(batch, supervised)))

    _, analytic, _ = model.loss_and_grads(tokens, target)
    errors = check_tensors(lambda: model.loss(tokens, target), model.tensors(), analytic, h=h)
    label = f"{kind}{'+filter' if output_filter else ''} n={n} D={D} L={L} seed={seed}"
    report = GradCheckReport(label=label, errors=errors, tol=tol)
    log.info(report.summary())
    return report


def head_grad_check(
    seed: int = 0,
    fan_in: int = 12,
    hidden: int = 5,
    classes: int = 4,
    batch: int = 6,
    h: float = FD_STEP,
    tol: float = HEAD_TOL,
) -> GradCheckReport:
    """Affine -> GELU -> affine -> cross-entropy, the MNIST classifier head."""
    rng = RngState(seed)
    head1 = Affine.create(rng, fan_in, hidden)
    head2 = Affine.create(rng, hidden, classes)
    z = rng.normal((batch, fan_in))
    labels = rng.integers(0, classes, size=batch)

    def loss_fn() -> float:
        return cross_entropy(mlp_head_forward(head1, head2, z)[0], labels)[0]

    logits, cache = mlp_head_forward(head1, head2, z)
    _, dlogits = cross_entropy(logits, labels)
    analytic, _ = mlp_head_backward(head1, head2, cache, dlogits)
    tensors = {
        "head1.W": ParamTensor("head1.W", head1.W), "head1.b": ParamTensor("head1.b", head1.b),
        "head2.W": ParamTensor("head2.W", head2.W), "head2.b": ParamTensor("head2.b", head2.b),
    }
    report = GradCheckReport(label=f"mnist head seed={seed}", errors=check_tensors(loss_fn, tensors, analytic, h=h), tol=tol)
    log.info(report.summary())
    return report


def model_grad_check(
    model,
    inputs: np.ndarray,
    targets,
    label: str = "model",
    max_entries: Optional[int] = 16,
    seed: int = 0,
    h: float = FD_STEP,
    tol: float = GRAD_TOL,
) -> GradCheckReport:
    """Sampled check of any model exposing ``loss_and_grads`` (e.g. the MNIST models)."""
    loss, analytic, _ = model.loss_and_grads(inputs, targets)

    def loss_fn() -> float:
        return model.loss_and_grads(inputs, targets)[0]

    errors = check_tensors(loss_fn, model.tensors(), analytic, h=h, max_entries=max_entries, rng=RngState(seed))
    report = GradCheckReport(label=label, errors=errors, tol=tol)
    log.info(report.summary())
    return report
