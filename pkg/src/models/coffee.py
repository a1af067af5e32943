"""
COFFEE: state-feedback selective SSM cell.

Each of the D input features drives its own n-dimensional diagonal subsystem

    Delta(k) = sigmoid(w_D * x(k-1))
    x(k)     = (1 + lambda * Delta(k)) * x(k-1) + Delta(k) * B * u(k)_i
    y(k)_i   = C . x(k)                 (optionally times sigmoid(w_gamma . x(k)))

where all products are componentwise over the n state entries. The gate is
computed from the previous state instead of the current token, so what enters
the state depends on the history seen so far. Training uses B = 1; an explicit
per-feature B is only carried by models awaiting canonicalization.

Single-step ops (``coffee_gate``, ``coffee_step``) work on one feature. The
batched kernels (``coffee_forward_batch`` / ``coffee_backward_batch``) run all
features of B sequences at once and are what training uses.

Example:
    >>> p = CoffeeParams(lam=np.zeros((1, 1)), C=np.ones((1, 1)), w_D=np.ones((1, 1)))
    >>> coffee_step(p, 0, np.zeros(1), 5.394)
    (array([2.697]), 2.697)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

try:
    from src.helpers.numerics import RngState, as_float_array, init_normal, sigmoid, check_finite
except ImportError:
    from helpers.numerics import RngState, as_float_array, init_normal, sigmoid, check_finite

log = logging.getLogger(__name__)

LAMBDA_MIN = -2.0
LAMBDA_MAX = 0.0


@dataclass
class GateVector:
    """Gate values for one feature: n entries for COFFEE, one for S6."""
    delta: np.ndarray
    feature: int
    kind: str  # 'coffee' or 's6'


@dataclass
class CoffeeParams:
    """
    Parameters of a COFFEE layer.

    All arrays are D x n. ``lam`` holds the diagonal of A for every feature
    and must stay in [-2, 0].
    """
    lam: np.ndarray
    C: np.ndarray
    w_D: np.ndarray
    w_gamma: Optional[np.ndarray] = None  # output filter
    B: Optional[np.ndarray] = None        # only before canonicalization

    kind = "coffee"

    def __post_init__(self):
        self.lam = as_float_array(self.lam)
        shape = self.lam.shape
        if len(shape) != 2:
            raise ValueError(f"lambda must be D x n, got shape {shape}")
        for name in ("C", "w_D", "w_gamma", "B"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = as_float_array(arr)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)

    @property
    def D(self) -> int:
        return self.lam.shape[0]

    @property
    def n(self) -> int:
        return self.lam.shape[1]

    @property
    def has_filter(self) -> bool:
        return self.w_gamma is not None

    def input_gain(self):
        return 1.0 if self.B is None else self.B

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {"lambda": self.lam, "C": self.C, "w_D": self.w_D}
        if self.w_gamma is not None:
            out["w_gamma"] = self.w_gamma
        if self.B is not None:
            out["B"] = self.B
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "CoffeeParams":
        return cls(
            lam=arrays["lambda"],
            C=arrays["C"],
            w_D=arrays["w_D"],
            w_gamma=arrays.get("w_gamma"),
            B=arrays.get("B"),
        )

    def copy(self) -> "CoffeeParams":
        return CoffeeParams.from_arrays({k: v.copy() for k, v in self.arrays().items()})


def init_coffee(rng: RngState, n: int, D: int, output_filter: bool = False) -> CoffeeParams:
    """
    Training initialization: lambda = 0, C and w_D standard normal.

    The output filter weights start at zero, so the filter opens at 0.5
    everywhere.
    """
    if n < 1 or D < 1:
        raise ValueError(f"n and D must be positive, got n={n}, D={D}")
    return CoffeeParams(
        lam=np.zeros((D, n)),
        C=init_normal(rng, (D, n)),
        w_D=init_normal(rng, (D, n)),
        w_gamma=np.zeros((D, n)) if output_filter else None,
    )


# =============================================================================
# SINGLE FEATURE OPS
# =============================================================================

def coffee_gate(params: CoffeeParams, feature: int, x_prev: np.ndarray) -> GateVector:
    """Delta = sigmoid(w_D[feature] * x_prev), one entry per state component."""
    if not 0 <= feature < params.D:
        raise ValueError(f"feature {feature} out of range for D={params.D}")
    x_prev = np.asarray(x_prev, dtype=params.lam.dtype)
    return GateVector(delta=sigmoid(params.w_D[feature] * x_prev), feature=feature, kind="coffee")


def coffee_step(
    params: CoffeeParams,
    feature: int,
    x_prev: np.ndarray,
    u_i: float
) -> Tuple[np.ndarray, float]:
    """
    Advance one feature's subsystem by one step.

    Args:
        params: Layer parameters
        feature: Feature index i
        x_prev: Previous state, shape (n,)
        u_i: Input for this feature

    Returns:
        (x_next, y_i)

    Raises:
        ValueError: On non-finite inputs or a bad feature index
    """
    x_prev = np.asarray(x_prev, dtype=params.lam.dtype)
    check_finite("x_prev", x_prev)
    check_finite("u_i", u_i)
    delta = coffee_gate(params, feature, x_prev).delta
    lam = params.lam[feature]
    gain = params.B[feature] if params.B is not None else 1.0
    x_next = (1.0 + lam * delta) * x_prev + delta * gain * u_i
    y = float(params.C[feature] @ x_next)
    if params.w_gamma is not None:
        y *= float(sigmoid(params.w_gamma[feature] @ x_next))
    return x_next, y


# =============================================================================
# BATCHED KERNELS
# =============================================================================

@dataclass
class CoffeeCache:
    """Forward trace kept for reverse mode. X[:, k+1] is x(k), X[:, 0] = 0."""
    U: np.ndarray
    X: np.ndarray
    Delta: np.ndarray
    Ylin: np.ndarray
    G: Optional[np.ndarray]
    Y: np.ndarray

    @property
    def states(self) -> np.ndarray:
        return self.X[:, 1:]


def coffee_forward_batch(params: CoffeeParams, U: np.ndarray) -> CoffeeCache:
    """
    Run the layer over a batch.

    Args:
        params: Layer parameters
        U: Inputs, shape (B, L, D)

    Returns:
        CoffeeCache with outputs Y of shape (B, L, D)
    """
    U = np.asarray(U)
    if U.ndim != 3 or U.shape[2] != params.D:
        raise ValueError(f"Expected input of shape (B, L, {params.D}), got {U.shape}")
    batch, L, D = U.shape
    n = params.n
    dtype = np.result_type(U.dtype, params.lam.dtype)
    gain = params.input_gain()

    X = np.zeros((batch, L + 1, D, n), dtype=dtype)
    Delta = np.empty((batch, L, D, n), dtype=dtype)
    for k in range(L):
        x_prev = X[:, k]
        delta = sigmoid(params.w_D * x_prev)
        Delta[:, k] = delta
        X[:, k + 1] = x_prev + delta * (params.lam * x_prev + gain * U[:, k, :, None])

    states = X[:, 1:]
    Ylin = np.einsum("bldn,dn->bld", states, params.C)
    G = None
    Y = Ylin
    if params.w_gamma is not None:
        G = sigmoid(np.einsum("bldn,dn->bld", states, params.w_gamma))
        Y = Ylin * G
    return CoffeeCache(U=U, X=X, Delta=Delta, Ylin=Ylin, G=G, Y=Y)


def coffee_backward_batch(
    params: CoffeeParams,
    cache: CoffeeCache,
    dY: np.ndarray,
    detach_gate_feedback: bool = False
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Reverse mode through ``coffee_forward_batch``.

    The gate sigmoid(w_D * x(k-1)) contributes twice: to the w_D gradient and
    to the gradient flowing back into x(k-1). ``detach_gate_feedback`` drops
    the second contribution (test hook).

    Args:
        params: Layer parameters used in the forward pass
        cache: Forward trace
        dY: Gradient of the loss w.r.t. outputs, shape (B, L, D)

    Returns:
        (grads keyed like ``params.arrays()``, gradient w.r.t. U)
    """
    U, X, Delta = cache.U, cache.X, cache.Delta
    batch, L, D = U.shape
    states = cache.states
    gain = params.input_gain()
    grads: Dict[str, np.ndarray] = {}

    if params.w_gamma is not None:
        G = cache.G
        dYlin = dY * G
        dS = dY * cache.Ylin * G * (1.0 - G)
        grads["w_gamma"] = np.einsum("bld,bldn->dn", dS, states)
        dStates = dYlin[..., None] * params.C + dS[..., None] * params.w_gamma
    else:
        dYlin = dY
        dStates = dY[..., None] * params.C
    grads["C"] = np.einsum("bld,bldn->dn", dYlin, states)

    g_lam = np.zeros_like(params.lam)
    g_w = np.zeros_like(params.w_D)
    g_B = np.zeros_like(params.lam) if params.B is not None else None
    dU = np.zeros_like(U, dtype=X.dtype)
    dx = np.zeros((batch, D, params.n), dtype=X.dtype)

    for k in range(L - 1, -1, -1):
        dx = dx + dStates[:, k]
        x_prev = X[:, k]
        delta = Delta[:, k]
        u = U[:, k, :, None]
        drive = params.lam * x_prev + gain * u
        dz = dx * drive * delta * (1.0 - delta)

        g_lam += np.sum(dx * delta * x_prev, axis=0)
        g_w += np.sum(dz * x_prev, axis=0)
        dU[:, k] = np.sum(dx * delta * gain, axis=-1)
        if g_B is not None:
            g_B += np.sum(dx * delta * u, axis=0)

        dx_prev = dx * (1.0 + params.lam * delta)
        if not detach_gate_feedback:
            dx_prev = dx_prev + dz * params.w_D
        dx = dx_prev

    grads["lambda"] = g_lam
    grads["w_D"] = g_w
    if g_B is not None:
        grads["B"] = g_B
    return grads, dU


def coffee_forward(params: CoffeeParams, embedded_seq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Single-sequence forward pass from the zero state.

    Args:
        params: Layer parameters
        embedded_seq: Inputs, shape (L, D)

    Returns:
        (outputs of shape (L, D), states of shape (L, D, n))
    """
    seq = np.asarray(embedded_seq, dtype=params.lam.dtype)
    if seq.ndim != 2:
        seq = seq.reshape(-1, params.D)
    check_finite("embedded_seq", seq)
    cache = coffee_forward_batch(params, seq[None])
    return cache.Y[0], cache.states[0]
