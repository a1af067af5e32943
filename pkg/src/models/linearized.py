"""
Linearized selective SSM cell.

First-order expansion of the S6 exponential around Delta = 0:

    x(k) = (I + A diag(Delta)) x(k-1) + diag(Delta) B^(i) u(k)_i

with per-feature diagonal A^(i), per-feature input and output rows B^(i),
C^(i), and a token gate Delta_i(k) = sigmoid((W_D u(k))_i) shared by the n
state entries of feature i. It sits between S6 and COFFEE: same token gate as
S6, same update shape as COFFEE.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

try:
    from src.helpers.numerics import RngState, as_float_array, init_normal, sigmoid
except ImportError:
    from helpers.numerics import RngState, as_float_array, init_normal, sigmoid

log = logging.getLogger(__name__)


@dataclass
class LinearizedParams:
    """lam, B, C: D x n. W_D: D x D."""
    lam: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W_D: np.ndarray

    kind = "linearized"

    def __post_init__(self):
        self.lam = as_float_array(self.lam)
        self.B = as_float_array(self.B)
        self.C = as_float_array(self.C)
        self.W_D = as_float_array(self.W_D)
        D, n = self.lam.shape
        if self.B.shape != (D, n) or self.C.shape != (D, n):
            raise ValueError(f"B and C must be {(D, n)}, got {self.B.shape}, {self.C.shape}")
        if self.W_D.shape != (D, D):
            raise ValueError(f"W_D must be {(D, D)}, got {self.W_D.shape}")

    @property
    def D(self) -> int:
        return self.lam.shape[0]

    @property
    def n(self) -> int:
        return self.lam.shape[1]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"lambda": self.lam, "B": self.B, "C": self.C, "W_D": self.W_D}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "LinearizedParams":
        return cls(lam=arrays["lambda"], B=arrays["B"], C=arrays["C"], W_D=arrays["W_D"])

    def copy(self) -> "LinearizedParams":
        return LinearizedParams.from_arrays({k: v.copy() for k, v in self.arrays().items()})


def init_linearized(rng: RngState, n: int, D: int) -> LinearizedParams:
    """lambda = 0 like COFFEE; B, C and W_D standard normal."""
    return LinearizedParams(
        lam=np.zeros((D, n)),
        B=init_normal(rng, (D, n)),
        C=init_normal(rng, (D, n)),
        W_D=init_normal(rng, (D, D)),
    )


def linearized_step(
    params: LinearizedParams,
    feature: int,
    x_prev: np.ndarray,
    u_i: float,
    delta: np.ndarray
) -> np.ndarray:
    """
    One linearized update with an externally supplied gate.

    Args:
        params: Layer parameters (only lam[feature] and B[feature] are used)
        feature: Feature index i
        x_prev: Previous state, shape (n,)
        u_i: Input for this feature
        delta: Gate values, shape (n,) or scalar

    Returns:
        x_next = (1 + lam * delta) * x_prev + delta * B * u_i
    """
    x_prev = np.asarray(x_prev, dtype=params.lam.dtype)
    lam = params.lam[feature]
    return (1.0 + lam * delta) * x_prev + delta * params.B[feature] * u_i


@dataclass
class LinearizedCache:
    U: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    gate: np.ndarray  # (B, L, D)
    Y: np.ndarray

    @property
    def states(self) -> np.ndarray:
        return self.X[:, 1:]


def linearized_forward_batch(params: LinearizedParams, U: np.ndarray) -> LinearizedCache:
    U = np.asarray(U)
    if U.ndim != 3 or U.shape[2] != params.D:
        raise ValueError(f"Expected input of shape (B, L, {params.D}), got {U.shape}")
    batch, L, D = U.shape
    dtype = np.result_type(U.dtype, params.lam.dtype)
    Z = U @ params.W_D.T
    gate = sigmoid(Z)

    X = np.zeros((batch, L + 1, D, params.n), dtype=dtype)
    for k in range(L):
        x_prev = X[:, k]
        delta = gate[:, k, :, None]
        X[:, k + 1] = x_prev + delta * (params.lam * x_prev + params.B * U[:, k, :, None])

    Y = np.einsum("bldn,dn->bld", X[:, 1:], params.C)
    return LinearizedCache(U=U, X=X, Z=Z, gate=gate, Y=Y)


def linearized_backward_batch(
    params: LinearizedParams,
    cache: LinearizedCache,
    dY: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Reverse mode through ``linearized_forward_batch``. Returns (grads, dU)."""
    U, X, gate = cache.U, cache.X, cache.gate
    batch, L, D = U.shape
    states = cache.states
    dStates = dY[..., None] * params.C

    g_lam = np.zeros_like(params.lam)
    g_B = np.zeros_like(params.B)
    dGate = np.empty_like(gate)
    dU = np.zeros_like(U, dtype=X.dtype)
    dx = np.zeros((batch, D, params.n), dtype=X.dtype)
    for k in range(L - 1, -1, -1):
        dx = dx + dStates[:, k]
        x_prev = X[:, k]
        delta = gate[:, k, :, None]
        u = U[:, k, :, None]
        dGate[:, k] = np.sum(dx * (params.lam * x_prev + params.B * u), axis=-1)
        g_lam += np.sum(dx * delta * x_prev, axis=0)
        g_B += np.sum(dx * delta * u, axis=0)
        dU[:, k] = np.sum(dx * delta * params.B, axis=-1)
        dx = dx * (1.0 + params.lam * delta)

    dZ = dGate * gate * (1.0 - gate)
    dU += dZ @ params.W_D
    grads = {
        "lambda": g_lam,
        "B": g_B,
        "C": np.einsum("bld,bldn->dn", dY, states),
        "W_D": np.einsum("ble,bld->ed", dZ, U),
    }
    return grads, dU
