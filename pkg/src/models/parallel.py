"""
Parallel-in-time evaluation of diagonal recurrences.

Two pieces:
- ``diag_linear_scan``: x(k) = a(k) x(k-1) + b(k) by a work-efficient
  (up-sweep / down-sweep) associative prefix scan over affine maps, with an
  operation counter. Tree shape depends only on the padded length.
- ``coffee_fixed_point_eval``: the whole COFFEE trajectory as the solution of
  x(k) = f(x(k-1), u(k)) for all k at once. Each sweep linearizes f around
  the current iterate using its diagonal Jacobian and solves the resulting
  linear recurrence with the scan.

Both are evaluation and verification paths; training runs the sequential
kernels.

Example:
    >>> x, _ = diag_linear_scan(np.ones(4), np.ones(4), 0.0)
    >>> x
    array([1., 2., 3., 4.])
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

try:
    from src.helpers.numerics import sigmoid
    from src.models.coffee import CoffeeParams, coffee_step
except ImportError:
    from helpers.numerics import sigmoid
    from models.coffee import CoffeeParams, coffee_step

log = logging.getLogger(__name__)


# =============================================================================
# ASSOCIATIVE SCAN
# =============================================================================

@dataclass(frozen=True)
class ScanElement:
    """Affine map x -> a x + b."""
    a: float
    b: float

    def apply(self, x: float) -> float:
        return self.a * x + self.b


def compose(second: ScanElement, first: ScanElement) -> ScanElement:
    """second o first = (a2 a1, a2 b1 + b2): apply ``first``, then ``second``."""
    return ScanElement(second.a * first.a, second.a * first.b + second.b)


@dataclass
class ScanCounter:
    """Number of pairwise compositions performed (each costs 3 flops per lane)."""
    combines: int = 0

    @property
    def scalar_ops(self) -> int:
        return 3 * self.combines


def sequential_linear_scan(a: np.ndarray, b: np.ndarray, x0=0.0) -> np.ndarray:
    """Reference left-to-right evaluation of x(k) = a(k) x(k-1) + b(k)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    x = np.broadcast_to(np.asarray(x0, dtype=float), out.shape[1:]).copy()
    for k in range(out.shape[0]):
        x = a[k] * x + b[k]
        out[k] = x
    return out


def diag_linear_scan(
    a: np.ndarray,
    b: np.ndarray,
    x0=0.0,
    counter: Optional[ScanCounter] = None
) -> Tuple[np.ndarray, ScanCounter]:
    """
    Evaluate x(k) = a(k) x(k-1) + b(k) by prefix composition.

    The leading axis is time; any trailing axes are independent lanes
    processed together at every tree level. x0 is folded into b(0), the
    sequence is padded with identity maps to a power of two, then a
    balanced up-sweep builds subtree totals and a down-sweep pushes
    exclusive prefixes back down. The tree is fixed by the padded length.

    Args:
        a: Multiplicative coefficients, shape (L, ...)
        b: Additive terms, same shape as a
        x0: Initial state, broadcastable to a lane
        counter: Optional counter to accumulate compositions into

    Returns:
        (states of shape (L, ...), counter)
    """
    counter = counter if counter is not None else ScanCounter()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    L = a.shape[0]
    if L == 0:
        return np.empty_like(b), counter

    size = 1 << (L - 1).bit_length()
    A = np.ones((size,) + a.shape[1:])
    Bv = np.zeros((size,) + a.shape[1:])
    A[:L] = a
    Bv[:L] = b
    Bv[0] = a[0] * x0 + b[0]

    # up-sweep: node r absorbs its left sibling (earlier in time)
    half = 1
    while half < size:
        right = np.arange(2 * half - 1, size, 2 * half)
        left = right - half
        Bv[right] = A[right] * Bv[left] + Bv[right]
        A[right] = A[right] * A[left]
        counter.combines += right.size
        half *= 2

    # down-sweep: exclusive prefixes, root starts at the identity
    A[size - 1] = 1.0
    Bv[size - 1] = 0.0
    half = size // 2
    while half >= 1:
        right = np.arange(2 * half - 1, size, 2 * half)
        left = right - half
        tA, tB = A[left].copy(), Bv[left].copy()
        A[left], Bv[left] = A[right], Bv[right]
        Bv[right] = tA * Bv[right] + tB
        A[right] = tA * A[right]
        counter.combines += right.size
        half //= 2

    # inclusive result: own element after the exclusive prefix, applied to 0
    x = a * Bv[:L] + b
    x[0] = a[0] * x0 + b[0]
    counter.combines += L
    return x, counter


# =============================================================================
# FIXED-POINT TRAJECTORY SOLVER
# =============================================================================

@dataclass
class FixedPointReport:
    iterations: int
    final_residual: float
    converged: bool


def _shift(X: np.ndarray) -> np.ndarray:
    prev = np.zeros_like(X)
    prev[1:] = X[:-1]
    return prev


def coffee_transition(params: CoffeeParams, x_prev: np.ndarray, U: np.ndarray):
    """f(x(k-1), u(k)) and its diagonal Jacobian for all k; shapes (L, D, n)."""
    gain = params.input_gain()
    delta = sigmoid(params.w_D * x_prev)
    drive = params.lam * x_prev + gain * U[..., None]
    f = x_prev + delta * drive
    J = 1.0 + params.lam * delta + drive * delta * (1.0 - delta) * params.w_D
    return f, J


def coffee_jacobian_diag(params: CoffeeParams, feature: int, x_prev: np.ndarray, u_i: float) -> np.ndarray:
    """
    Analytic diagonal of d x(k) / d x(k-1) for one feature:

        (1 + lam Delta) + (lam x + B u) sigmoid'(w x) w
    """
    x_prev = np.asarray(x_prev, dtype=float)
    sub = CoffeeParams(
        lam=params.lam[feature:feature + 1],
        C=params.C[feature:feature + 1],
        w_D=params.w_D[feature:feature + 1],
        B=None if params.B is None else params.B[feature:feature + 1],
    )
    _, J = coffee_transition(sub, x_prev[None], np.array([u_i], dtype=float))
    return J[0]


def _residual(params: CoffeeParams, X: np.ndarray, U: np.ndarray) -> float:
    f, _ = coffee_transition(params, _shift(X), U)
    r = np.abs(X - f)
    if not np.all(np.isfinite(r)):
        return np.inf
    return float(r.max()) if r.size else 0.0


def coffee_fixed_point_eval(
    params: CoffeeParams,
    embedded_seq: np.ndarray,
    tol: float = 1e-8,
    max_iter: Optional[int] = None,
    max_halvings: int = 4
) -> Tuple[np.ndarray, FixedPointReport]:
    """
    Solve the whole COFFEE trajectory at once.

    Starting from all-zero states, each sweep linearizes the step map around
    the previous iterate,

        x(k) ~ f(x_hat(k-1)) + J(k) (x(k-1) - x_hat(k-1)),

    and solves that diagonal linear recurrence with ``diag_linear_scan``.
    A full step is taken when it lowers the residual
    max |x(k) - f(x(k-1))|; otherwise the step is halved up to
    ``max_halvings`` times. If no halving helps the full step is kept, which
    preserves the property that sweep t makes the first t states exact.

    Args:
        params: COFFEE parameters
        embedded_seq: Inputs, shape (L, D)
        tol: Residual tolerance (> 0)
        max_iter: Sweep limit, default L + 10

    Returns:
        (states of shape (L, D, n), FixedPointReport). On non-convergence the
        best iterate seen is returned with converged=False.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    U = np.asarray(embedded_seq, dtype=float)
    L = U.shape[0]
    X = np.zeros((L, params.D, params.n))
    if L == 0:
        return X, FixedPointReport(iterations=0, final_residual=0.0, converged=True)
    max_iter = L + 10 if max_iter is None else max_iter

    with np.errstate(over="ignore", invalid="ignore"):
        res = _residual(params, X, U)
        best, best_res = X, res
        for it in range(1, max_iter + 1):
            prev = _shift(X)
            f, J = coffee_transition(params, prev, U)
            newton, _ = diag_linear_scan(J, f - J * prev, 0.0)
            step, step_res = newton, _residual(params, newton, U)
            if step_res > res:
                alpha = 0.5
                for _ in range(max_halvings):
                    cand = X + alpha * (newton - X)
                    cand_res = _residual(params, cand, U)
                    if cand_res < res:
                        step, step_res = cand, cand_res
                        break
                    alpha *= 0.5
            X, res = step, step_res
            if res < best_res:
                best, best_res = X, res
            if res < tol:
                log.debug("Fixed point converged in %d sweeps (residual %.3e)", it, res)
                return X, FixedPointReport(iterations=it, final_residual=res, converged=True)

    log.warning(
        "Fixed-point solver stopped after %d sweeps, best residual %.3e (tol %.1e)",
        max_iter, best_res, tol,
    )
    return best, FixedPointReport(iterations=max_iter, final_residual=best_res, converged=False)


def finite_difference_jacobian(
    params: CoffeeParams,
    x_prev: np.ndarray,
    u_i: float,
    feature: int = 0,
    h: float = 1e-6
) -> np.ndarray:
    """Central-difference estimate of the full n x n state Jacobian of coffee_step."""
    x_prev = np.asarray(x_prev, dtype=float)
    n = x_prev.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        plus, _ = coffee_step(params, feature, x_prev + e, u_i)
        minus, _ = coffee_step(params, feature, x_prev - e, u_i)
        J[:, j] = (plus - minus) / (2.0 * h)
    return J


def jacobian_diag_check(
    params: CoffeeParams,
    x_prev: np.ndarray,
    u_i: float,
    feature: int = 0,
    h: float = 1e-6
) -> float:
    """Largest off-diagonal magnitude of the finite-difference state Jacobian."""
    J = finite_difference_jacobian(params, x_prev, u_i, feature=feature, h=h)
    if J.shape[0] == 1:
        return 0.0
    off = J - np.diag(np.diag(J))
    return float(np.abs(off).max())
