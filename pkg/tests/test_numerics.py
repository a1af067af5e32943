import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.helpers.numerics import (
    ParamTensor,
    RngState,
    activation,
    activation_grad,
    check_finite,
    gelu,
    init_affine,
    init_embedding_qr,
    init_hippo_diag,
    resolve_dtype,
    sigmoid,
    softplus,
)


def test_rng_same_seed_same_stream() -> None:
    a, b = RngState(7), RngState(7)
    assert_allclose(a.normal(5), b.normal(5))
    assert_allclose(a.uniform(3), b.uniform(3))


def test_rng_split_is_deterministic_and_independent() -> None:
    root = RngState(7)
    assert root.split(1).seed == 8
    assert_allclose(root.split(1).normal(4), RngState(7).split(1).normal(4))
    assert not np.allclose(root.split(1).normal(4), root.split(2).normal(4))


def test_rng_integers_half_open() -> None:
    draws = RngState(0).integers(1, 4, size=1000)
    assert draws.min() == 1 and draws.max() == 3


def test_resolve_dtype() -> None:
    assert resolve_dtype() == np.float64
    assert resolve_dtype(f32=True) == np.float32


def test_qr_embedding_rows_are_orthonormal() -> None:
    E = init_embedding_qr(RngState(3), vocab_size=8, D=16)
    assert E.shape == (8, 16)
    assert_allclose(E @ E.T, np.eye(8), atol=1e-12)


def test_qr_embedding_square_case() -> None:
    E = init_embedding_qr(RngState(3), vocab_size=4, D=4)
    assert_allclose(E @ E.T, np.eye(4), atol=1e-12)


def test_qr_embedding_rejects_vocab_larger_than_dimension() -> None:
    with pytest.raises(ValueError, match="vocab_size <= D"):
        init_embedding_qr(RngState(0), vocab_size=9, D=8)


def test_hippo_diagonal() -> None:
    assert_allclose(init_hippo_diag(4), [-1.0, -2.0, -3.0, -4.0])
    with pytest.raises(ValueError):
        init_hippo_diag(0)


def test_affine_init_bounds() -> None:
    W, b = init_affine(RngState(0), fan_in=100, fan_out=25)
    assert W.shape == (25, 100) and b.shape == (25,)
    assert np.abs(W).max() <= 0.1 and np.abs(b).max() <= 0.1


def test_activation_values() -> None:
    assert sigmoid(0.0) == pytest.approx(0.5)
    assert softplus(0.0) == pytest.approx(np.log(2.0))
    assert gelu(0.0) == pytest.approx(0.0)
    assert activation("softplus", 0.0) == pytest.approx(0.6931471805599453)
    assert sigmoid(2.697) == pytest.approx(0.9368, abs=1e-4)


def test_softplus_does_not_overflow() -> None:
    assert softplus(1000.0) == pytest.approx(1000.0)
    assert softplus(-1000.0) == pytest.approx(0.0, abs=1e-300)


@pytest.mark.parametrize("kind", ["sigmoid", "softplus", "gelu"])
def test_activation_grad_matches_finite_differences(kind) -> None:
    x = np.linspace(-4.0, 4.0, 17)
    h = 1e-6
    numeric = (activation(kind, x + h) - activation(kind, x - h)) / (2 * h)
    assert_allclose(activation_grad(kind, x), numeric, atol=1e-8)


def test_unknown_activation() -> None:
    with pytest.raises(ValueError, match="Unknown activation"):
        activation("relu", 1.0)


def test_param_tensor_shapes() -> None:
    t = ParamTensor("w", np.ones((2, 3)))
    t.accumulate(np.ones((2, 3)))
    t.accumulate(np.ones((2, 3)))
    assert_allclose(t.grad, 2.0)
    t.zero_grad()
    assert not t.grad.any()
    with pytest.raises(ValueError, match="expected"):
        t.accumulate(np.ones(3))


def test_check_finite() -> None:
    check_finite("ok", np.ones(3))
    with pytest.raises(ValueError, match="bad"):
        check_finite("bad", np.array([1.0, np.nan]))
