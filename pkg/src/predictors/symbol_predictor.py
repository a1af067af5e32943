"""
Distance-based symbol prediction head.

Turns SSM outputs into symbol predictions the same way for every task that
uses an embedding table:

1. embed: symbols -> rows of the embedding table
2. distances: Euclidean distance from each output vector to every embedding
3. softmin_rows: distances -> probabilities favouring the nearest embedding
4. logits_transform: elementwise logit of the (clamped) probabilities
5. predict: argmax over logits (ties -> lowest index)
6. cross_entropy / accuracy at the supervised positions

``head_forward`` / ``head_backward`` chain steps 2-4 for reverse mode.

Example:
    >>> softmin_rows(np.array([[0.0, np.log(3.0)]]))
    array([[0.75, 0.25]])
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

PROB_EPS = 1e-12
ACCURACY_MODES = ("per-position", "per-sequence")


# =============================================================================
# VOCABULARY AND EMBEDDINGS
# =============================================================================

@dataclass(frozen=True)
class Vocab:
    """
    Ordered symbol set M with the task alphabet V inside it.

    Row m of an embedding table belongs to ``symbols[m]``.
    """
    symbols: Tuple[int, ...]
    alphabet: Tuple[int, ...]
    _index: Dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        symbols = tuple(int(s) for s in self.symbols)
        alphabet = tuple(int(s) for s in self.alphabet)
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"Vocabulary symbols must be unique, got {symbols}")
        missing = sorted(set(alphabet) - set(symbols))
        if missing:
            raise ValueError(f"Alphabet symbols {missing} are not in the vocabulary {symbols}")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: int) -> int:
        try:
            return self._index[int(symbol)]
        except KeyError:
            raise ValueError(f"Unknown symbol {symbol!r}; vocabulary is {self.symbols}") from None

    def encode(self, sequence: Iterable[int]) -> np.ndarray:
        """Symbols -> row indices. Works on nested sequences / arrays."""
        arr = np.asarray(sequence)
        if arr.size == 0:
            return arr.astype(np.int64)
        lookup = np.full(max(self.symbols) + 1, -1, dtype=np.int64)
        lookup[list(self.symbols)] = np.arange(len(self.symbols))
        bad = (arr < 0) | (arr > max(self.symbols))
        idx = np.where(bad, -1, lookup[np.clip(arr, 0, max(self.symbols))])
        if np.any(idx < 0):
            unknown = sorted(set(np.asarray(arr)[idx < 0].tolist()))
            raise ValueError(f"Unknown symbols {unknown}; vocabulary is {self.symbols}")
        return idx

    def decode(self, indices) -> np.ndarray:
        return np.asarray(self.symbols)[np.asarray(indices)]


def ih_vocab(vocab_size: int = 8, alphabet_size: int = 7) -> Vocab:
    """M = {0, 1, ..., vocab_size - 1} with V = {1, ..., alphabet_size} and pad 0."""
    if vocab_size < alphabet_size + 1:
        raise ValueError(
            f"vocab_size={vocab_size} cannot hold the pad symbol and {alphabet_size} task symbols"
        )
    return Vocab(symbols=tuple(range(vocab_size)), alphabet=tuple(range(1, alphabet_size + 1)))


@dataclass
class EmbeddingTable:
    """|M| x D table. ``frozen_row`` is a row index held at all-ones."""
    table: np.ndarray
    frozen_row: Optional[int] = None

    def __post_init__(self):
        if self.table.ndim != 2:
            raise ValueError(f"Embedding table must be 2-D, got shape {self.table.shape}")
        self.refreeze()

    @property
    def D(self) -> int:
        return self.table.shape[1]

    def refreeze(self) -> None:
        if self.frozen_row is not None:
            self.table[self.frozen_row] = 1.0

    def mask_grad(self, grad: np.ndarray) -> np.ndarray:
        if self.frozen_row is not None:
            grad[self.frozen_row] = 0.0
        return grad


@dataclass
class PredictionTarget:
    """
    Supervised positions for a batch.

    positions: time indices shared by every sequence, shape (P,)
    targets: row indices of the expected symbols, shape (B, P)
    """
    positions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64).reshape(-1)
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.int64))
        if self.targets.shape[1] != self.positions.size:
            raise ValueError(
                f"targets have {self.targets.shape[1]} columns for {self.positions.size} positions"
            )

    def subset(self, rows) -> "PredictionTarget":
        return PredictionTarget(self.positions, self.targets[rows])


def embed(vocab: Vocab, table: np.ndarray, sequence: Sequence[int]) -> np.ndarray:
    """Row k is the embedding of symbol k. Unknown symbols raise ValueError."""
    idx = vocab.encode(sequence)
    if idx.size == 0:
        return np.empty((0, table.shape[1]), dtype=table.dtype)
    return table[idx]


# =============================================================================
# HEAD
# =============================================================================

def distances(outputs: np.ndarray, table: np.ndarray, squared: bool = False) -> np.ndarray:
    """
    Distance from every output vector to every embedding.

    Args:
        outputs: (..., D)
        table: (|M|, D)
        squared: Use squared Euclidean distance (ablation only)

    Returns:
        (..., |M|) array of non-negative distances
    """
    if outputs.shape[-1] != table.shape[-1]:
        raise ValueError(f"Dimension mismatch: outputs {outputs.shape}, table {table.shape}")
    diff = outputs[..., None, :] - table
    sq = np.einsum("...md,...md->...m", diff, diff)
    return sq if squared else np.sqrt(sq)


def softmin_rows(d: np.ndarray) -> np.ndarray:
    """softmin along the last axis, max-shifted."""
    z = -d
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits_transform(p: np.ndarray, eps: float = PROB_EPS) -> np.ndarray:
    """logit(p) = log(p / (1 - p)) after clamping p into [eps, 1 - eps]."""
    q = np.clip(p, eps, 1.0 - eps)
    return np.log(q) - np.log1p(-q)


def predict(logits: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest index."""
    return np.argmax(logits, axis=-1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean softmax cross-entropy and its gradient w.r.t. logits.

    Args:
        logits: (..., |M|) logits at the supervised positions only
        targets: (...) integer class indices

    Returns:
        (loss, gradient of the same shape as logits)

    Raises:
        ValueError: On an empty target set or out-of-range targets
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("cross_entropy needs at least one supervised position")
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    M = logits.shape[-1]
    if targets.min() < 0 or targets.max() >= M:
        raise ValueError(f"targets must lie in [0, {M}), got range [{targets.min()}, {targets.max()}]")
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    count = targets.size
    loss = float(-picked.sum() / count)
    grad = np.exp(logp)
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
    return loss, grad / count


def accuracy(predictions: np.ndarray, targets: np.ndarray, mode: str = "per-sequence") -> float:
    """
    Fraction of correct predictions.

    per-position averages every supervised position; per-sequence counts a
    row correct only when all of its positions match.
    """
    predictions = np.atleast_2d(np.asarray(predictions))
    targets = np.atleast_2d(np.asarray(targets))
    if predictions.shape != targets.shape:
        raise ValueError(f"Shape mismatch: predictions {predictions.shape}, targets {targets.shape}")
    hits = predictions == targets
    if mode == "per-position":
        return float(hits.mean())
    if mode == "per-sequence":
        return float(hits.all(axis=1).mean())
    raise ValueError(f"Unknown accuracy mode '{mode}'. Expected one of {ACCURACY_MODES}")


@dataclass
class HeadCache:
    diff: np.ndarray
    d: np.ndarray
    s: np.ndarray
    logits: np.ndarray
    squared: bool
    eps: float


def head_forward(outputs: np.ndarray, table: np.ndarray, squared: bool = False, eps: float = PROB_EPS) -> HeadCache:
    """distances -> softmin -> logit, keeping what reverse mode needs."""
    diff = outputs[..., None, :] - table
    sq = np.einsum("...md,...md->...m", diff, diff)
    d = sq if squared else np.sqrt(sq)
    s = softmin_rows(d)
    return HeadCache(diff=diff, d=d, s=s, logits=logits_transform(s, eps), squared=squared, eps=eps)


def head_backward(cache: HeadCache, dlogits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients of the head w.r.t. outputs and embedding table.

    Clamped probabilities pass no gradient. At zero Euclidean distance the
    distance gradient is taken as 0.
    """
    s = cache.s
    inside = (s > cache.eps) & (s < 1.0 - cache.eps)
    ds = np.where(inside, dlogits / (s * (1.0 - s)), 0.0)
    dd = -s * (ds - np.sum(ds * s, axis=-1, keepdims=True))
    if cache.squared:
        coeff = 2.0 * dd
    else:
        safe = np.where(cache.d > 0, cache.d, 1.0)
        coeff = np.where(cache.d > 0, dd / safe, 0.0)
    weighted = coeff[..., None] * cache.diff
    d_out = weighted.sum(axis=-2)
    d_table = -weighted.reshape(-1, *weighted.shape[-2:]).sum(axis=0)
    return d_out, d_table
