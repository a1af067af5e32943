"""
Canonical form of a COFFEE layer with explicit input rows B^(i).

With a pivot embedding v whose entries are all nonzero, the per-feature state
rescaling x' = x / (B^(i) v_i) absorbs B into the output row and turns the
pivot embedding into the all-ones vector:

    B'       = 1
    C'       = (B^(i) v_i) * C^(i)
    w_D'     = (B^(i) v_i) * w_D^(i)      gates unchanged
    w_gamma' = (B^(i) v_i) * w_gamma^(i)  filter unchanged
    emb'(m)  = emb(m) / v                 every row, elementwise
    lambda'  = lambda

so the layer output is identical on every token sequence.

Example:
    >>> p = CoffeeParams(lam=[[0.0]], C=[[3.0]], w_D=[[1.0]], B=[[2.0]])
    >>> q, table = canonicalize(p, np.array([[1.0]]), pivot=0)
    >>> q.C, q.B
    (array([[6.]]), None)
"""

import logging
from typing import Tuple

import numpy as np

try:
    from src.models.coffee import CoffeeParams
except ImportError:
    from models.coffee import CoffeeParams

log = logging.getLogger(__name__)


def canonicalize(
    params: CoffeeParams,
    table: np.ndarray,
    pivot: int
) -> Tuple[CoffeeParams, np.ndarray]:
    """
    Remove the per-feature input rows by a change of state basis.

    Args:
        params: COFFEE parameters, optionally carrying B (None means B = 1)
        table: Embedding table, shape (|M|, D)
        pivot: Row index of the pivot symbol in ``table``

    Returns:
        (canonical params with B=None, new table whose pivot row is all ones)

    Raises:
        ValueError: If the pivot row or any B entry is zero
    """
    table = np.asarray(table)
    if table.ndim != 2 or table.shape[1] != params.D:
        raise ValueError(f"Embedding table must be (|M|, {params.D}), got {table.shape}")
    if not 0 <= pivot < table.shape[0]:
        raise ValueError(f"Pivot row {pivot} out of range for {table.shape[0]} symbols")
    v = table[pivot]
    if np.any(v == 0):
        zero = np.flatnonzero(v == 0).tolist()
        raise ValueError(f"Pivot embedding has zero entries at features {zero}")
    B = np.ones_like(params.lam) if params.B is None else params.B
    if np.any(B == 0):
        rows, cols = np.nonzero(B == 0)
        raise ValueError(
            f"B has zero entries at (feature, state) {list(zip(rows.tolist(), cols.tolist()))}"
        )

    scale = B * v[:, None]
    canon = CoffeeParams(
        lam=params.lam.copy(),
        C=params.C * scale,
        w_D=params.w_D * scale,
        w_gamma=None if params.w_gamma is None else params.w_gamma * scale,
    )
    new_table = table / v[None, :]
    new_table[pivot] = 1.0
    log.debug("Canonicalized %d features with pivot row %d", params.D, pivot)
    return canon, new_table
