"""
Numerics shared by every other package module.

This module provides the dense-array plumbing the state-space cells are built
on:
- A single seedable, platform independent random stream (PCG64)
- Learnable parameter storage with a matching gradient buffer
- Scalar activations (sigmoid, softplus, exact GELU) and their derivatives
- Parameter initializers (orthonormal QR embedding, standard normal, HiPPO
  diagonal, uniform fan-in for affine heads)

Arrays are plain numpy arrays. float64 is the default everywhere; float32 is
selected explicitly through ``resolve_dtype``.

Example:
    >>> rng = RngState(seed=7)
    >>> E = init_embedding_qr(rng, vocab_size=8, D=16)
    >>> np.allclose(E @ E.T, np.eye(8))
    True
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple, Union

import numpy as np
from scipy.linalg import qr
from scipy.special import expit, ndtr

log = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

ACTIVATIONS = ("sigmoid", "softplus", "gelu")


# =============================================================================
# RANDOM STREAMS
# =============================================================================

@dataclass
class RngState:
    """
    Seeded random stream.

    Wraps ``numpy.random.Generator`` over the PCG64 bit generator, whose
    output for a given seed is identical on every platform. Gaussian draws
    use numpy's ziggurat sampler (exact, not an approximation).

    A stream is single-owner. Workers get their own stream through
    ``split(index)``, which seeds a fresh generator with ``seed + index``.
    """
    seed: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed) & SEED_MASK
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def split(self, index: int) -> "RngState":
        return RngState(seed=(self.seed + int(index)) & SEED_MASK)

    def uniform(self, shape=None):
        return self.generator.random(shape)

    def normal(self, shape=None):
        return self.generator.standard_normal(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers in [low, high)."""
        return self.generator.integers(low, high, size=size)


def resolve_dtype(f32: bool = False) -> np.dtype:
    return np.dtype(np.float32) if f32 else np.dtype(np.float64)


# =============================================================================
# PARAMETER STORAGE
# =============================================================================

@dataclass
class ParamTensor:
    """A learnable array and its gradient buffer (always the same shape)."""
    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"Gradient shape {self.grad.shape} does not match "
                f"value shape {self.value.shape} for '{self.name}'"
            )

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ValueError(
                f"Gradient for '{self.name}' has shape {g.shape}, "
                f"expected {self.value.shape}"
            )
        self.grad += g


def check_finite(name: str, x: Union[np.ndarray, float]) -> None:
    """Raise ValueError if ``x`` holds NaN or infinity."""
    if not np.all(np.isfinite(x)):
        raise ValueError(f"Non-finite values in '{name}'")


# =============================================================================
# ACTIVATIONS
# =============================================================================

def sigmoid(x):
    return expit(x)


def softplus(x):
    return np.logaddexp(0.0, x)


def gelu(x):
    """Exact GELU, x * Phi(x)."""
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def activation(kind: str, x):
    """
    Evaluate a scalar activation elementwise.

    Args:
        kind: 'sigmoid', 'softplus' or 'gelu'
        x: scalar or array

    Returns:
        Activation of x, same shape

    Raises:
        ValueError: If kind is unknown

    Example:
        >>> activation('softplus', 0.0)
        0.6931471805599453
    """
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softplus":
        return softplus(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"Unknown activation '{kind}'. Expected one of {ACTIVATIONS}")


def activation_grad(kind: str, x):
    """Derivative of ``activation(kind, .)`` evaluated at x."""
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "softplus":
        return sigmoid(x)
    if kind == "gelu":
        return gelu_grad(x)
    raise ValueError(f"Unknown activation '{kind}'. Expected one of {ACTIVATIONS}")


# =============================================================================
# INITIALIZERS
# =============================================================================

def init_embedding_qr(rng: RngState, vocab_size: int, D: int) -> np.ndarray:
    """
    Orthonormal embedding rows.

    Fills a D x vocab_size matrix uniformly on [0, 1), takes the Q factor of
    its (economic) QR factorization and returns Q transposed, so the rows are
    mutually orthogonal unit vectors.

    Args:
        rng: Random stream
        vocab_size: Number of symbols |M|
        D: Embedding dimension

    Returns:
        Array of shape (vocab_size, D)

    Raises:
        ValueError: If vocab_size > D or either is not positive
    """
    if vocab_size < 1 or D < 1:
        raise ValueError(f"vocab_size and D must be positive, got {vocab_size}, {D}")
    if vocab_size > D:
        raise ValueError(
            f"Orthonormal init needs vocab_size <= D, got vocab_size={vocab_size}, D={D}"
        )
    L = rng.uniform((D, vocab_size))
    Q, _ = qr(L, mode="economic")
    return np.ascontiguousarray(Q.T)


def init_normal(rng: RngState, shape) -> np.ndarray:
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s < 0 for s in shape):
        raise ValueError(f"Shape must be non-negative, got {shape}")
    return rng.normal(shape)


def init_hippo_diag(n: int) -> np.ndarray:
    """HiPPO diagonal: the i-th entry is -(i+1)."""
    if n < 1:
        raise ValueError(f"State dimension must be >= 1, got {n}")
    return -np.arange(1, n + 1, dtype=np.float64)


def init_affine(rng: RngState, fan_in: int, fan_out: int) -> Tuple[np.ndarray, np.ndarray]:
    """Weight (fan_out x fan_in) and bias, uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    W = (2.0 * rng.uniform((fan_out, fan_in)) - 1.0) * bound
    b = (2.0 * rng.uniform((fan_out,)) - 1.0) * bound
    return W, b


def cast_arrays(arrays: Dict[str, np.ndarray], dtype: np.dtype) -> Dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=dtype) for k, v in arrays.items()}


def as_float_array(x) -> np.ndarray:
    """View x as a floating array, keeping its precision when already float."""
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr
