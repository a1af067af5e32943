"""
Shared numerics.

Core utilities:
- numerics: random streams, parameter storage, activations, initializers
"""

from .numerics import (
    RngState,
    ParamTensor,
    activation,
    activation_grad,
    sigmoid,
    softplus,
    gelu,
    gelu_grad,
    init_embedding_qr,
    init_normal,
    init_hippo_diag,
    init_affine,
    resolve_dtype,
    check_finite,
)

__all__ = [
    "RngState",
    "ParamTensor",
    "activation",
    "activation_grad",
    "sigmoid",
    "softplus",
    "gelu",
    "gelu_grad",
    "init_embedding_qr",
    "init_normal",
    "init_hippo_diag",
    "init_affine",
    "resolve_dtype",
    "check_finite",
]
