"""State-space cells, canonical form, parameter bookkeeping and parallel evaluation."""

from .coffee import (
    CoffeeParams,
    GateVector,
    init_coffee,
    coffee_gate,
    coffee_step,
    coffee_forward,
    coffee_forward_batch,
    coffee_backward_batch,
)
from .s6 import S6Params, init_s6, s6_gate, s6_step, s6_forward, zoh_coefficients, zoh_update
from .linearized import LinearizedParams, init_linearized, linearized_step
from .canonical import canonicalize
from .helpers import (
    stability_project,
    count_params,
    block_params,
    mnist_param_count,
    smnist_param_count,
)
from .layers import SSM_KINDS, init_ssm, ssm_forward, ssm_backward, params_from_arrays
from .mnist import Affine, MnistModel, SmnistModel, mnist_forward, mnist_views, smnist_forward
from .parallel import (
    ScanElement,
    ScanCounter,
    FixedPointReport,
    compose,
    diag_linear_scan,
    sequential_linear_scan,
    coffee_fixed_point_eval,
    coffee_jacobian_diag,
    jacobian_diag_check,
)

__all__ = [
    "CoffeeParams",
    "GateVector",
    "init_coffee",
    "coffee_gate",
    "coffee_step",
    "coffee_forward",
    "coffee_forward_batch",
    "coffee_backward_batch",
    "S6Params",
    "init_s6",
    "s6_gate",
    "s6_step",
    "s6_forward",
    "zoh_coefficients",
    "zoh_update",
    "LinearizedParams",
    "init_linearized",
    "linearized_step",
    "canonicalize",
    "stability_project",
    "count_params",
    "block_params",
    "mnist_param_count",
    "smnist_param_count",
    "SSM_KINDS",
    "init_ssm",
    "ssm_forward",
    "ssm_backward",
    "params_from_arrays",
    "Affine",
    "MnistModel",
    "SmnistModel",
    "mnist_forward",
    "mnist_views",
    "smnist_forward",
    "ScanElement",
    "ScanCounter",
    "FixedPointReport",
    "compose",
    "diag_linear_scan",
    "sequential_linear_scan",
    "coffee_fixed_point_eval",
    "coffee_jacobian_diag",
    "jacobian_diag_check",
]
