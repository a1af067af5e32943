"""
Model bookkeeping helpers.

- stability_project: clamp COFFEE lambda into [-2, 0]
- count_params: closed-form parameter counts per block, embedding and the
  MNIST/sMNIST architectures
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

try:
    from src.models.coffee import CoffeeParams, LAMBDA_MIN, LAMBDA_MAX
except ImportError:
    from models.coffee import CoffeeParams, LAMBDA_MIN, LAMBDA_MAX

log = logging.getLogger(__name__)

MNIST_SIDE = 25
MNIST_VIEWS = 4
MNIST_HIDDEN = 25
SMNIST_LENGTH = 784
N_CLASSES = 10


# =============================================================================
# STABILITY
# =============================================================================

def stability_project(params: CoffeeParams, inplace: bool = False) -> CoffeeParams:
    """
    Clamp every lambda into [-2, 0]. Idempotent.

    Args:
        params: COFFEE parameters
        inplace: Modify ``params.lam`` instead of returning a copy

    Returns:
        Projected parameters
    """
    if inplace:
        np.clip(params.lam, LAMBDA_MIN, LAMBDA_MAX, out=params.lam)
        return params
    out = params.copy()
    np.clip(out.lam, LAMBDA_MIN, LAMBDA_MAX, out=out.lam)
    return out


# =============================================================================
# PARAMETER COUNTS
# =============================================================================

def block_params(model_kind: str, n: int, D: int, output_filter: bool = False) -> int:
    """One SSM layer: 3nD for COFFEE (+nD with filter), 3nD + D^2 for S6/linearized."""
    if n < 1 or D < 1:
        raise ValueError(f"n and D must be positive, got n={n}, D={D}")
    if model_kind == "coffee":
        return 3 * n * D + (n * D if output_filter else 0)
    if model_kind in ("s6", "linearized"):
        if output_filter:
            raise ValueError(f"Output filtering is not defined for '{model_kind}'")
        return 3 * n * D + D * D
    raise ValueError(f"Unknown model kind '{model_kind}'")


def affine_params(fan_in: int, fan_out: int) -> int:
    return fan_in * fan_out + fan_out


def embedding_params(vocab_size: int, D: int, canonical: bool = False) -> int:
    """|M| D, or (|M| - 1) D once one row is fixed to ones."""
    return (vocab_size - 1) * D if canonical else vocab_size * D


def count_params(
    model_kind: str,
    n: int,
    D: int,
    vocab_size: Optional[int] = None,
    output_filter: bool = False,
    canonical: bool = False,
    layers: int = 1,
    heads: Sequence[Tuple[int, int]] = (),
) -> int:
    """
    Total learnable parameters of an architecture.

    Args:
        model_kind: 'coffee', 's6' or 'linearized'
        n: State dimension
        D: Feature dimension
        vocab_size: |M| if the model has an embedding table, else None
        output_filter: COFFEE output filtering
        canonical: Embedding has one frozen row
        layers: Number of SSM layers
        heads: (fan_in, fan_out) of each affine head layer

    Returns:
        Parameter count

    Example:
        >>> count_params('coffee', 2, 25, layers=4, heads=[(100, 25), (25, 10)])
        3385
    """
    total = layers * block_params(model_kind, n, D, output_filter)
    if vocab_size is not None:
        total += embedding_params(vocab_size, D, canonical)
    total += sum(affine_params(i, o) for i, o in heads)
    return total


def mnist_param_count(model_kind: str, n: int, output_filter: bool = False) -> int:
    """Four-view MNIST architecture: 4 layers (D=25) + 100->25 + 25->10."""
    return count_params(
        model_kind, n, MNIST_SIDE,
        output_filter=output_filter,
        layers=MNIST_VIEWS,
        heads=[(MNIST_VIEWS * MNIST_SIDE, MNIST_HIDDEN), (MNIST_HIDDEN, N_CLASSES)],
    )


def smnist_param_count(model_kind: str = "coffee", n: int = 8, use_ssm: bool = True) -> int:
    """Sequential MNIST: one D=1 layer + 784->10, or the head alone."""
    head = affine_params(SMNIST_LENGTH, N_CLASSES)
    if not use_ssm:
        return head
    return block_params(model_kind, n, 1) + head
