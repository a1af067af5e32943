"""
Induction-head sequence model: embedding -> SSM layer -> distance head.

``IHModel`` bundles a vocabulary, an embedding table shared by the input and
the prediction head, and one SSM layer of any kind. It exposes the training
surface used by the loops:

- ``tensors()``: named ParamTensor views of every learnable array
- ``loss_and_grads()``: batch-mean cross-entropy at the supervised positions
  and exact reverse-mode gradients
- ``after_step()``: lambda projection and re-freezing of the canonical row
- ``evaluate()``: loss and accuracy

Example:
    >>> model = IHModel.create('coffee', n=8, D=16, vocab=ih_vocab(), rng=RngState(0))
    >>> sorted(model.tensors())
    ['embedding', 'ssm.C', 'ssm.lambda', 'ssm.w_D']
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

try:
    from src.helpers.numerics import ParamTensor, RngState, init_embedding_qr
    from src.models.canonical import canonicalize
    from src.models.helpers import stability_project
    from src.models.layers import cast_ssm, init_ssm, ssm_backward, ssm_forward
    from src.predictors.symbol_predictor import (
        EmbeddingTable, PredictionTarget, Vocab, accuracy, cross_entropy,
        head_backward, head_forward, predict,
    )
except ImportError:
    from helpers.numerics import ParamTensor, RngState, init_embedding_qr
    from models.canonical import canonicalize
    from models.helpers import stability_project
    from models.layers import cast_ssm, init_ssm, ssm_backward, ssm_forward
    from predictors.symbol_predictor import (
        EmbeddingTable, PredictionTarget, Vocab, accuracy, cross_entropy,
        head_backward, head_forward, predict,
    )

log = logging.getLogger(__name__)


@dataclass
class IHModel:
    vocab: Vocab
    embedding: EmbeddingTable
    ssm: object  # CoffeeParams | S6Params | LinearizedParams
    squared_distance: bool = False
    _tensors: Optional[Dict[str, ParamTensor]] = field(default=None, init=False, repr=False)

    @classmethod
    def create(
        cls,
        kind: str,
        n: int,
        D: int,
        vocab: Vocab,
        rng: RngState,
        output_filter: bool = False,
        squared_distance: bool = False,
        dtype=np.float64,
    ) -> "IHModel":
        """Orthonormal embedding, then the kind's training initialization."""
        table = init_embedding_qr(rng, len(vocab), D).astype(dtype)
        ssm = cast_ssm(init_ssm(kind, rng, n, D, output_filter=output_filter), dtype)
        return cls(vocab=vocab, embedding=EmbeddingTable(table), ssm=ssm, squared_distance=squared_distance)

    @property
    def kind(self) -> str:
        return self.ssm.kind

    @property
    def n(self) -> int:
        return self.ssm.n

    @property
    def D(self) -> int:
        return self.ssm.D

    # -------------------------------------------------------------------------
    # parameters
    # -------------------------------------------------------------------------

    def tensors(self) -> Dict[str, ParamTensor]:
        if self._tensors is None:
            out = {"embedding": ParamTensor("embedding", self.embedding.table)}
            for name, arr in self.ssm.arrays().items():
                out[f"ssm.{name}"] = ParamTensor(f"ssm.{name}", arr)
            self._tensors = out
        return self._tensors

    def after_step(self) -> None:
        """Keep COFFEE lambda in [-2, 0] and the canonical row at ones."""
        if self.kind == "coffee":
            stability_project(self.ssm, inplace=True)
        self.embedding.refreeze()

    # -------------------------------------------------------------------------
    # forward / backward
    # -------------------------------------------------------------------------

    def forward(self, tokens: np.ndarray, positions: np.ndarray):
        """tokens: (B, L) row indices. Returns (ssm cache, head cache at positions)."""
        tokens = np.atleast_2d(tokens)
        U = self.embedding.table[tokens]
        cache = ssm_forward(self.ssm, U)
        head = head_forward(cache.Y[:, positions], self.embedding.table, squared=self.squared_distance)
        return cache, head

    def loss_and_grads(
        self,
        tokens: np.ndarray,
        target: PredictionTarget,
        detach_gate_feedback: bool = False,
    ) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
        """
        Batch-mean loss, gradients keyed like ``tensors()``, and predictions.
        """
        tokens = np.atleast_2d(tokens)
        cache, head = self.forward(tokens, target.positions)
        loss, dlogits = cross_entropy(head.logits, target.targets)
        d_out, d_table = head_backward(head, dlogits)

        dY = np.zeros_like(cache.Y)
        dY[:, target.positions] = d_out
        options = {"detach_gate_feedback": True} if detach_gate_feedback else {}
        grads_ssm, dU = ssm_backward(self.ssm, cache, dY, **options)

        g_table = d_table.copy()
        np.add.at(g_table, tokens.reshape(-1), dU.reshape(-1, self.D))
        grads = {"embedding": self.embedding.mask_grad(g_table)}
        grads.update({f"ssm.{k}": v for k, v in grads_ssm.items()})
        return loss, grads, predict(head.logits)

    def loss(self, tokens: np.ndarray, target: PredictionTarget) -> float:
        _, head = self.forward(tokens, target.positions)
        return cross_entropy(head.logits, target.targets)[0]

    def predict(self, tokens: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """Predicted row indices at ``positions``, shape (B, P)."""
        _, head = self.forward(tokens, positions)
        return predict(head.logits)

    def evaluate(
        self,
        tokens: np.ndarray,
        target: PredictionTarget,
        mode: str = "per-sequence",
        chunk: int = 2048,
    ) -> Tuple[float, float]:
        """(mean loss, accuracy) over a possibly large set, in chunks."""
        tokens = np.atleast_2d(tokens)
        total, preds = 0.0, []
        for start in range(0, tokens.shape[0], chunk):
            rows = slice(start, start + chunk)
            _, head = self.forward(tokens[rows], target.positions)
            part = target.targets[rows]
            total += cross_entropy(head.logits, part)[0] * part.shape[0]
            preds.append(predict(head.logits))
        return total / tokens.shape[0], accuracy(np.concatenate(preds), target.targets, mode)

    # -------------------------------------------------------------------------
    # canonical form
    # -------------------------------------------------------------------------

    def canonicalize(self, pivot_symbol: int) -> "IHModel":
        """Equivalent COFFEE model with B = 1 and the pivot embedding frozen at ones."""
        if self.kind != "coffee":
            raise ValueError(f"Canonicalization applies to COFFEE layers, not '{self.kind}'")
        pivot = self.vocab.index(pivot_symbol)
        params, table = canonicalize(self.ssm, self.embedding.table, pivot)
        return IHModel(
            vocab=self.vocab,
            embedding=EmbeddingTable(table, frozen_row=pivot),
            ssm=params,
            squared_distance=self.squared_distance,
        )

    def ssm_outputs(self, tokens: np.ndarray) -> np.ndarray:
        """Raw SSM outputs (B, L, D) for a batch of row-index sequences."""
        U = self.embedding.table[np.atleast_2d(tokens)]
        return ssm_forward(self.ssm, U).Y
