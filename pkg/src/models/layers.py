"""Dispatch over the three SSM cell kinds ('coffee', 's6', 'linearized')."""

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

try:
    from src.helpers.numerics import RngState
    from src.models.coffee import CoffeeParams, init_coffee, coffee_forward_batch, coffee_backward_batch
    from src.models.s6 import S6Params, init_s6, s6_forward_batch, s6_backward_batch
    from src.models.linearized import (
        LinearizedParams, init_linearized, linearized_forward_batch, linearized_backward_batch,
    )
except ImportError:
    from helpers.numerics import RngState
    from models.coffee import CoffeeParams, init_coffee, coffee_forward_batch, coffee_backward_batch
    from models.s6 import S6Params, init_s6, s6_forward_batch, s6_backward_batch
    from models.linearized import (
        LinearizedParams, init_linearized, linearized_forward_batch, linearized_backward_batch,
    )


@dataclass(frozen=True)
class SSMKind:
    name: str
    params_cls: type
    init: Callable
    forward: Callable
    backward: Callable


SSM_KINDS: Dict[str, SSMKind] = {
    "coffee": SSMKind("coffee", CoffeeParams, init_coffee, coffee_forward_batch, coffee_backward_batch),
    "s6": SSMKind("s6", S6Params, init_s6, s6_forward_batch, s6_backward_batch),
    "linearized": SSMKind(
        "linearized", LinearizedParams, init_linearized,
        linearized_forward_batch, linearized_backward_batch,
    ),
}


def get_kind(name: str) -> SSMKind:
    if name not in SSM_KINDS:
        raise ValueError(f"Unknown model kind '{name}'. Expected one of {sorted(SSM_KINDS)}")
    return SSM_KINDS[name]


def init_ssm(kind: str, rng: RngState, n: int, D: int, output_filter: bool = False):
    """Training initialization for any kind. Only COFFEE supports the output filter."""
    if output_filter and kind != "coffee":
        raise ValueError(f"Output filtering is a COFFEE option, not available for '{kind}'")
    if kind == "coffee":
        return init_coffee(rng, n, D, output_filter=output_filter)
    return get_kind(kind).init(rng, n, D)


def setattr_array(params, name: str, value: np.ndarray) -> None:
    """Assign a named array on any params dataclass (checkpoint names)."""
    setattr(params, "lam" if name == "lambda" else name, value)


def cast_ssm(params, dtype):
    """Cast every array of ``params`` to ``dtype`` in place."""
    for name, arr in params.arrays().items():
        setattr_array(params, name, arr.astype(dtype))
    return params


def params_from_arrays(kind: str, arrays: Dict[str, np.ndarray]):
    return get_kind(kind).params_cls.from_arrays(arrays)


def ssm_forward(params, U: np.ndarray):
    return get_kind(params.kind).forward(params, U)


def ssm_backward(params, cache, dY: np.ndarray, **options) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    return get_kind(params.kind).backward(params, cache, dY, **options)
