"""
S6 selective SSM cell (token-gated baseline).

For feature i with diagonal A^(i) = diag(lambda_i), lambda = -exp(mu):

    Delta_i(k) = softplus((W_D u(k))_i)          one scalar per feature
    B(k) = W_B u(k),  C(k) = W_C u(k)            shared by all features
    x(k) = exp(lambda Delta_i) x(k-1) + ((exp(lambda Delta_i) - 1) / lambda) B(k) u(k)_i
    y(k)_i = C(k) . x(k)

The zero-order-hold coefficient (exp(lambda Delta) - 1) / lambda falls back to
its limit Delta when |lambda| < 1e-12.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

try:
    from src.helpers.numerics import (
        RngState, as_float_array, check_finite, init_hippo_diag, init_normal, sigmoid, softplus,
    )
    from src.models.coffee import GateVector
except ImportError:
    from helpers.numerics import (
        RngState, as_float_array, check_finite, init_hippo_diag, init_normal, sigmoid, softplus,
    )
    from models.coffee import GateVector

log = logging.getLogger(__name__)

ZOH_LIMIT_TOL = 1e-12
_SERIES_TOL = 1e-3


@dataclass
class S6Params:
    """
    Parameters of an S6 layer.

    mu: D x n stability exponents, W_B and W_C: n x D, W_D: D x D.
    """
    mu: np.ndarray
    W_B: np.ndarray
    W_C: np.ndarray
    W_D: np.ndarray

    kind = "s6"

    def __post_init__(self):
        self.mu = as_float_array(self.mu)
        self.W_B = as_float_array(self.W_B)
        self.W_C = as_float_array(self.W_C)
        self.W_D = as_float_array(self.W_D)
        D, n = self.mu.shape
        if self.W_B.shape != (n, D) or self.W_C.shape != (n, D):
            raise ValueError(
                f"W_B/W_C must be {(n, D)}, got {self.W_B.shape} and {self.W_C.shape}"
            )
        if self.W_D.shape != (D, D):
            raise ValueError(f"W_D must be {(D, D)}, got {self.W_D.shape}")

    @property
    def D(self) -> int:
        return self.mu.shape[0]

    @property
    def n(self) -> int:
        return self.mu.shape[1]

    @property
    def lam(self) -> np.ndarray:
        return -np.exp(self.mu)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"mu": self.mu, "W_B": self.W_B, "W_C": self.W_C, "W_D": self.W_D}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "S6Params":
        return cls(mu=arrays["mu"], W_B=arrays["W_B"], W_C=arrays["W_C"], W_D=arrays["W_D"])

    def copy(self) -> "S6Params":
        return S6Params.from_arrays({k: v.copy() for k, v in self.arrays().items()})


def init_s6(rng: RngState, n: int, D: int) -> S6Params:
    """HiPPO diagonal (lambda_j = -(j+1), so mu_j = log(j+1)); W_* standard normal."""
    hippo = init_hippo_diag(n)
    mu = np.tile(np.log(-hippo), (D, 1))
    return S6Params(
        mu=mu,
        W_B=init_normal(rng, (n, D)),
        W_C=init_normal(rng, (n, D)),
        W_D=init_normal(rng, (D, D)),
    )


# =============================================================================
# ZERO-ORDER HOLD
# =============================================================================

def zoh_coefficients(lam: np.ndarray, delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Return (exp(lam*delta), (exp(lam*delta) - 1) / lam), broadcasting.

    The second factor uses its analytic limit delta when |lam| < 1e-12.
    """
    lam, delta = np.broadcast_arrays(lam, delta)
    E = np.exp(lam * delta)
    small = np.abs(lam) < ZOH_LIMIT_TOL
    safe = np.where(small, 1.0, lam)
    F = np.where(small, delta, np.expm1(lam * delta) / safe)
    return E, F


def _zoh_dF_dlam(lam: np.ndarray, delta: np.ndarray, E: np.ndarray) -> np.ndarray:
    """d/dlam of (exp(lam*delta) - 1)/lam, with a series branch for small lam*delta."""
    z = lam * delta
    series = np.abs(z) < _SERIES_TOL
    safe = np.where(series, 1.0, lam)
    exact = (delta * E * safe - np.expm1(np.where(series, 0.0, z))) / (safe * safe)
    taylor = delta * delta * (0.5 + z / 3.0 + z * z / 8.0)
    return np.where(series, taylor, exact)


def zoh_update(
    lam: np.ndarray,
    delta: float,
    x_prev: np.ndarray,
    b: np.ndarray,
    u_i: float
) -> np.ndarray:
    """Exact ZOH state update for one feature given its gate and B(k)."""
    E, F = zoh_coefficients(lam, delta)
    return E * x_prev + F * b * u_i


# =============================================================================
# SINGLE FEATURE OPS
# =============================================================================

def s6_gate(params: S6Params, feature: int, u_vec: np.ndarray) -> GateVector:
    """Delta_i = softplus((W_D u)_i): a single positive entry."""
    if not 0 <= feature < params.D:
        raise ValueError(f"feature {feature} out of range for D={params.D}")
    z = params.W_D[feature] @ np.asarray(u_vec, dtype=params.mu.dtype)
    return GateVector(delta=np.atleast_1d(softplus(z)), feature=feature, kind="s6")


def s6_step(
    params: S6Params,
    feature: int,
    x_prev: np.ndarray,
    u_vec: np.ndarray,
    delta: Optional[float] = None
) -> Tuple[np.ndarray, float]:
    """
    Advance one feature of an S6 layer by one step.

    Args:
        params: Layer parameters
        feature: Feature index i
        x_prev: Previous state, shape (n,)
        u_vec: Full input vector u(k), shape (D,)
        delta: Override for the gate value (test hook)

    Returns:
        (x_next, y_i)

    Raises:
        ValueError: If the gate value is not finite
    """
    u_vec = np.asarray(u_vec, dtype=params.mu.dtype)
    x_prev = np.asarray(x_prev, dtype=params.mu.dtype)
    if delta is None:
        delta = float(s6_gate(params, feature, u_vec).delta[0])
    if not np.isfinite(delta):
        raise ValueError(f"Gate value for feature {feature} is not finite: {delta}")
    b = params.W_B @ u_vec
    c = params.W_C @ u_vec
    x_next = zoh_update(params.lam[feature], delta, x_prev, b, u_vec[feature])
    return x_next, float(c @ x_next)


# =============================================================================
# BATCHED KERNELS
# =============================================================================

@dataclass
class S6Cache:
    """Forward trace. X[:, k+1] is x(k)."""
    U: np.ndarray
    X: np.ndarray
    Z: np.ndarray       # W_D u, (B, L, D)
    Delta: np.ndarray   # (B, L, D)
    Bk: np.ndarray      # (B, L, n)
    Ck: np.ndarray      # (B, L, n)
    E: np.ndarray       # (B, L, D, n)
    F: np.ndarray       # (B, L, D, n)
    Y: np.ndarray

    @property
    def states(self) -> np.ndarray:
        return self.X[:, 1:]


def s6_forward_batch(params: S6Params, U: np.ndarray) -> S6Cache:
    """Run the layer over U of shape (B, L, D)."""
    U = np.asarray(U)
    if U.ndim != 3 or U.shape[2] != params.D:
        raise ValueError(f"Expected input of shape (B, L, {params.D}), got {U.shape}")
    batch, L, D = U.shape
    dtype = np.result_type(U.dtype, params.mu.dtype)

    Z = U @ params.W_D.T
    Delta = softplus(Z)
    check_finite("S6 gate", Delta)
    Bk = U @ params.W_B.T
    Ck = U @ params.W_C.T
    E, F = zoh_coefficients(params.lam, Delta[..., None])
    drive = F * Bk[:, :, None, :] * U[..., None]

    X = np.zeros((batch, L + 1, D, params.n), dtype=dtype)
    for k in range(L):
        X[:, k + 1] = E[:, k] * X[:, k] + drive[:, k]

    Y = np.einsum("bldn,bln->bld", X[:, 1:], Ck)
    return S6Cache(U=U, X=X, Z=Z, Delta=Delta, Bk=Bk, Ck=Ck, E=E, F=F, Y=Y)


def s6_backward_batch(
    params: S6Params,
    cache: S6Cache,
    dY: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Reverse mode through ``s6_forward_batch``. Returns (grads, dU)."""
    U, X, E, F = cache.U, cache.X, cache.E, cache.F
    batch, L, D = U.shape
    lam = params.lam
    states = cache.states

    dStates = dY[..., None] * cache.Ck[:, :, None, :]
    dCk = np.einsum("bld,bldn->bln", dY, states)
    dU = dCk @ params.W_C

    dE = np.empty_like(E)
    dF = np.empty_like(F)
    dBk = np.empty_like(cache.Bk)
    dx = np.zeros((batch, D, params.n), dtype=X.dtype)
    for k in range(L - 1, -1, -1):
        dx = dx + dStates[:, k]
        u = U[:, k, :, None]
        dE[:, k] = dx * X[:, k]
        dF[:, k] = dx * cache.Bk[:, k, None, :] * u
        dBk[:, k] = np.sum(dx * F[:, k] * u, axis=1)
        dU[:, k] += np.sum(dx * F[:, k] * cache.Bk[:, k, None, :], axis=-1)
        dx = dx * E[:, k]

    delta = cache.Delta[..., None]
    dDelta = np.sum(dE * E * lam + dF * E, axis=-1)
    dlam = np.sum(dE * E * delta + dF * _zoh_dF_dlam(lam, delta, E), axis=(0, 1))
    dZ = dDelta * sigmoid(cache.Z)

    dU += dZ @ params.W_D
    dU += dBk @ params.W_B
    grads = {
        "mu": dlam * lam,
        "W_B": np.einsum("bln,bld->nd", dBk, U),
        "W_C": np.einsum("bln,bld->nd", dCk, U),
        "W_D": np.einsum("ble,bld->ed", dZ, U),
    }
    return grads, dU


def s6_forward(params: S6Params, embedded_seq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Single-sequence forward; returns (outputs (L, D), states (L, D, n))."""
    seq = np.asarray(embedded_seq, dtype=params.mu.dtype)
    cache = s6_forward_batch(params, seq[None])
    return cache.Y[0], cache.states[0]
