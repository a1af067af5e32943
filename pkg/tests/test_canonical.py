import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.helpers.numerics import RngState
from src.models.canonical import canonicalize
from src.models.coffee import CoffeeParams, coffee_forward_batch
from src.predictors.sequence_predictor import IHModel
from src.predictors.symbol_predictor import ih_vocab
from src.utils.validation import canonical_checks, canonical_equivalence_check

from conftest import random_coffee


def test_scalar_example() -> None:
    p = CoffeeParams(lam=[[0.0]], C=[[3.0]], w_D=[[1.0]], B=[[2.0]])
    q, table = canonicalize(p, np.array([[1.0]]), pivot=0)
    assert_allclose(q.C, [[6.0]])
    assert q.B is None
    assert_allclose(table, [[1.0]])


def test_pivot_row_becomes_ones_and_lambda_is_kept(rng) -> None:
    params = random_coffee(rng, n=2, D=3)
    params.B = 1.0 + rng.uniform((3, 2))
    table = rng.normal((4, 3)) + 3.0
    canon, new_table = canonicalize(params, table, pivot=2)
    assert_allclose(new_table[2], np.ones(3))
    assert_allclose(canon.lam, params.lam)


def test_outputs_are_preserved_with_filter(rng) -> None:
    params = random_coffee(rng, n=3, D=4, output_filter=True)
    params.B = np.where(rng.uniform((4, 3)) < 0.5, -1.0, 1.0) * (0.5 + rng.uniform((4, 3)))
    table = rng.normal((5, 4))
    table[1] = 0.5 + rng.uniform(4)
    assert canonical_equivalence_check(params, table, pivot=1) < 1e-10


def test_zero_pivot_entry_is_rejected(rng) -> None:
    params = random_coffee(rng, n=1, D=2)
    with pytest.raises(ValueError, match="zero entries"):
        canonicalize(params, np.array([[1.0, 0.0], [1.0, 1.0]]), pivot=0)


def test_zero_b_entry_is_rejected(rng) -> None:
    params = random_coffee(rng, n=2, D=1)
    params.B = np.array([[1.0, 0.0]])
    with pytest.raises(ValueError, match="B has zero entries"):
        canonicalize(params, np.ones((2, 1)), pivot=0)


def test_pivot_out_of_range(rng) -> None:
    with pytest.raises(ValueError, match="out of range"):
        canonicalize(random_coffee(rng, n=1, D=2), np.ones((2, 2)), pivot=5)


def test_model_canonicalize_freezes_the_pivot_row() -> None:
    model = IHModel.create("coffee", 3, 8, ih_vocab(8), RngState(2))
    model.embedding.table[:] += 0.1
    canon = model.canonicalize(pivot_symbol=1)
    assert canon.embedding.frozen_row == 1
    assert_allclose(canon.embedding.table[1], 1.0)
    tokens = RngState(3).integers(0, 8, size=(20, 16))
    assert_allclose(canon.ssm_outputs(tokens), model.ssm_outputs(tokens), atol=1e-10)


def test_frozen_row_survives_updates() -> None:
    model = IHModel.create("coffee", 2, 8, ih_vocab(8), RngState(2)).canonicalize(1)
    model.embedding.table[1] = 5.0
    model.after_step()
    assert_allclose(model.embedding.table[1], 1.0)


def test_canonicalize_requires_coffee() -> None:
    model = IHModel.create("s6", 2, 8, ih_vocab(8), RngState(2))
    with pytest.raises(ValueError, match="COFFEE"):
        model.canonicalize(1)


def test_twenty_random_models() -> None:
    checks = canonical_checks(seed=5)
    assert len(checks) == 20
    assert checks["passed"].all(), checks.loc[~checks["passed"]]
