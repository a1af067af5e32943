import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.helpers.numerics import RngState, sigmoid
from src.models.coffee import (
    CoffeeParams,
    coffee_forward,
    coffee_forward_batch,
    coffee_gate,
    coffee_step,
    init_coffee,
)
from src.models.helpers import block_params, count_params, mnist_param_count, smnist_param_count, stability_project
from src.models.layers import cast_ssm, get_kind, init_ssm, params_from_arrays
from src.models.linearized import LinearizedParams, init_linearized, linearized_forward_batch, linearized_step
from src.models.s6 import S6Params, init_s6, s6_forward, s6_forward_batch, s6_step, zoh_coefficients, zoh_update

from conftest import random_coffee


def _integrator() -> CoffeeParams:
    return CoffeeParams(lam=np.zeros((1, 1)), C=np.ones((1, 1)), w_D=np.ones((1, 1)))


# -----------------------------------------------------------------------------
# COFFEE
# -----------------------------------------------------------------------------

def test_coffee_step_from_zero_state() -> None:
    x, y = coffee_step(_integrator(), 0, np.zeros(1), 5.394)
    assert_allclose(x, [2.697])
    assert y == pytest.approx(2.697)


def test_coffee_step_second_step() -> None:
    x, _ = coffee_step(_integrator(), 0, np.array([2.697]), -10.264)
    assert x[0] == pytest.approx(-6.919, abs=1e-3)


def test_coffee_gate_reads_the_previous_state() -> None:
    gate = coffee_gate(_integrator(), 0, np.array([2.697]))
    assert gate.delta[0] == pytest.approx(0.9368, abs=1e-4)


def test_coffee_gate_rejects_bad_feature() -> None:
    with pytest.raises(ValueError, match="out of range"):
        coffee_gate(_integrator(), 1, np.zeros(1))


def test_coffee_step_rejects_non_finite_input() -> None:
    with pytest.raises(ValueError):
        coffee_step(_integrator(), 0, np.zeros(1), np.nan)


def test_coffee_forward_matches_step_loop(rng) -> None:
    params = random_coffee(rng, n=3, D=4, output_filter=True)
    U = rng.normal((9, 4))
    Y, states = coffee_forward(params, U)
    for i in range(4):
        x = np.zeros(3)
        for k in range(9):
            x, y = coffee_step(params, i, x, U[k, i])
            assert_allclose(states[k, i], x, atol=1e-12)
            assert Y[k, i] == pytest.approx(y, abs=1e-12)


def test_coffee_batch_rows_are_independent(rng, tiny_coffee) -> None:
    U = rng.normal((3, 6, 4))
    batched = coffee_forward_batch(tiny_coffee, U).Y
    for b in range(3):
        assert_allclose(batched[b], coffee_forward(tiny_coffee, U[b])[0], atol=1e-12)


def test_coffee_explicit_unit_b_changes_nothing(rng, tiny_coffee) -> None:
    U = rng.normal((2, 5, 4))
    with_b = tiny_coffee.copy()
    with_b.B = np.ones_like(with_b.lam)
    assert_allclose(coffee_forward_batch(with_b, U).Y, coffee_forward_batch(tiny_coffee, U).Y)


def test_coffee_zero_filter_halves_the_output(rng, tiny_coffee) -> None:
    U = rng.normal((2, 5, 4))
    filtered = tiny_coffee.copy()
    filtered.w_gamma = np.zeros_like(filtered.lam)
    assert_allclose(coffee_forward_batch(filtered, U).Y, 0.5 * coffee_forward_batch(tiny_coffee, U).Y)


def test_coffee_zero_input_keeps_zero_state(tiny_coffee) -> None:
    Y, states = coffee_forward(tiny_coffee, np.zeros((7, 4)))
    assert not Y.any() and not states.any()


def test_coffee_params_shape_validation() -> None:
    with pytest.raises(ValueError, match="expected"):
        CoffeeParams(lam=np.zeros((2, 3)), C=np.zeros((2, 2)), w_D=np.zeros((2, 3)))


def test_init_coffee() -> None:
    params = init_coffee(RngState(0), n=8, D=16, output_filter=True)
    assert params.lam.shape == (16, 8)
    assert not params.lam.any() and not params.w_gamma.any()


def test_stability_projection_clamps_and_is_idempotent() -> None:
    params = CoffeeParams(lam=[[-3.0, 0.5, -1.0]], C=[[1.0, 1.0, 1.0]], w_D=[[0.0, 0.0, 0.0]])
    once = stability_project(params)
    assert_allclose(once.lam, [[-2.0, 0.0, -1.0]])
    assert_allclose(stability_project(once).lam, once.lam)
    assert_allclose(params.lam, [[-3.0, 0.5, -1.0]])
    stability_project(params, inplace=True)
    assert_allclose(params.lam, once.lam)


# -----------------------------------------------------------------------------
# S6
# -----------------------------------------------------------------------------

def test_zoh_coefficients() -> None:
    E, F = zoh_coefficients(np.array([-1.0]), np.array([0.5]))
    assert E[0] == pytest.approx(np.exp(-0.5))
    assert F[0] == pytest.approx((np.exp(-0.5) - 1.0) / -1.0)


def test_zoh_coefficients_zero_lambda_limit() -> None:
    E, F = zoh_coefficients(np.array([0.0, 1e-14]), np.array([0.3, 0.3]))
    assert_allclose(E, [1.0, 1.0])
    assert_allclose(F, [0.3, 0.3])


def test_zoh_update() -> None:
    x = zoh_update(np.array([-1.0, -2.0]), 0.1, np.array([1.0, 1.0]), np.array([2.0, 2.0]), 1.0)
    expected = np.exp([-0.1, -0.2]) + np.expm1([-0.1, -0.2]) / np.array([-1.0, -2.0]) * 2.0
    assert_allclose(x, expected)


def test_s6_hippo_initialization() -> None:
    params = init_s6(RngState(0), n=4, D=3)
    assert_allclose(params.lam, np.tile([-1.0, -2.0, -3.0, -4.0], (3, 1)))
    assert params.W_D.shape == (3, 3) and params.W_B.shape == (4, 3)


def test_s6_lambda_is_always_negative(rng) -> None:
    params = S6Params(mu=rng.normal((2, 3)) * 5, W_B=rng.normal((3, 2)), W_C=rng.normal((3, 2)), W_D=rng.normal((2, 2)))
    assert np.all(params.lam < 0)


def test_s6_forward_matches_step_loop(rng) -> None:
    params = init_s6(rng, n=3, D=4)
    U = rng.normal((6, 4))
    Y, states = s6_forward(params, U)
    for i in range(4):
        x = np.zeros(3)
        for k in range(6):
            x, y = s6_step(params, i, x, U[k])
            assert_allclose(states[k, i], x, atol=1e-12)
            assert Y[k, i] == pytest.approx(y, abs=1e-12)


def test_s6_gate_override() -> None:
    params = init_s6(RngState(0), n=2, D=2)
    u = np.array([1.0, -1.0])
    x, _ = s6_step(params, 0, np.zeros(2), u, delta=0.0)
    assert_allclose(x, 0.0)
    with pytest.raises(ValueError, match="not finite"):
        s6_step(params, 0, np.zeros(2), u, delta=np.inf)


# -----------------------------------------------------------------------------
# LINEARIZED
# -----------------------------------------------------------------------------

def test_linearized_step_formula() -> None:
    params = LinearizedParams(lam=[[-1.0, -0.5]], B=[[2.0, 1.0]], C=[[1.0, 1.0]], W_D=[[0.0]])
    x = linearized_step(params, 0, np.array([1.0, 2.0]), 3.0, np.array([0.1, 0.2]))
    assert_allclose(x, [(1 - 0.1) * 1.0 + 0.1 * 2.0 * 3.0, (1 - 0.1) * 2.0 + 0.2 * 1.0 * 3.0])


def test_linearized_forward_matches_step_loop(rng) -> None:
    params = init_linearized(rng, n=2, D=3)
    params.lam = -rng.uniform((3, 2))
    U = rng.normal((1, 5, 3))
    cache = linearized_forward_batch(params, U)
    gate = sigmoid(U[0] @ params.W_D.T)
    for i in range(3):
        x = np.zeros(2)
        for k in range(5):
            x = linearized_step(params, i, x, U[0, k, i], gate[k, i])
            assert_allclose(cache.states[0, k, i], x, atol=1e-12)


def test_linearized_shape_validation() -> None:
    with pytest.raises(ValueError, match="W_D"):
        LinearizedParams(lam=np.zeros((2, 1)), B=np.zeros((2, 1)), C=np.zeros((2, 1)), W_D=np.zeros((1, 1)))


# -----------------------------------------------------------------------------
# DISPATCH AND COUNTS
# -----------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["coffee", "s6", "linearized"])
def test_params_round_trip_through_arrays(kind) -> None:
    params = init_ssm(kind, RngState(0), n=2, D=3)
    again = params_from_arrays(kind, params.arrays())
    for name, arr in params.arrays().items():
        assert_allclose(again.arrays()[name], arr)


def test_unknown_kind_and_filter_restriction() -> None:
    with pytest.raises(ValueError, match="Unknown model kind"):
        get_kind("lstm")
    with pytest.raises(ValueError, match="COFFEE option"):
        init_ssm("s6", RngState(0), 2, 2, output_filter=True)


def test_block_params() -> None:
    assert block_params("coffee", 8, 16) == 384
    assert block_params("coffee", 8, 16, output_filter=True) == 512
    assert block_params("s6", 8, 16) == 640
    assert block_params("linearized", 8, 16) == 640


def test_induction_head_counts() -> None:
    assert count_params("coffee", 8, 16, vocab_size=8) == 512
    assert count_params("s6", 8, 16, vocab_size=8) == 768
    assert count_params("coffee", 1, 9, vocab_size=8) == 99
    assert count_params("coffee", 8, 16, vocab_size=8, canonical=True) == 496


def test_mnist_counts() -> None:
    assert mnist_param_count("coffee", 2) == 3385
    assert mnist_param_count("coffee", 2, output_filter=True) == 3585
    assert mnist_param_count("s6", 2) == 5885
    assert mnist_param_count("s6", 16) == 10085


def test_smnist_counts() -> None:
    assert smnist_param_count("coffee", 8) == 7874
    assert smnist_param_count(use_ssm=False) == 7850


@pytest.mark.parametrize("kind", ["coffee", "s6", "linearized"])
def test_cast_ssm_converts_every_array(kind) -> None:
    params = cast_ssm(init_ssm(kind, RngState(0), 3, 4), np.float32)
    assert {a.dtype for a in params.arrays().values()} == {np.dtype(np.float32)}
