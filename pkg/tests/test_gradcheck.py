import numpy as np
import pytest

from src.helpers.numerics import RngState
from src.predictors.symbol_predictor import PredictionTarget
from src.training import grad_check, head_grad_check
from src.training.gradcheck import _tiny_ih_model, relative_error


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("kind", ["coffee", "s6", "linearized"])
def test_pipeline_gradients(kind, seed) -> None:
    report = grad_check(kind=kind, seed=seed)
    assert report.passed, report.summary()
    assert "embedding" in report.errors


@pytest.mark.parametrize("seed", [0, 3])
def test_output_filter_gradients(seed) -> None:
    report = grad_check(kind="coffee", seed=seed, output_filter=True)
    assert report.passed, report.summary()
    assert "ssm.w_gamma" in report.errors


def test_longer_sequence_and_single_position() -> None:
    report = grad_check(kind="coffee", n=2, D=3, L=20, supervised=1, seed=7)
    assert report.passed, report.summary()


def test_head_gradients() -> None:
    assert head_grad_check(seed=0).passed


def test_report_frame_and_summary() -> None:
    report = grad_check(kind="s6", seed=4)
    frame = report.to_frame()
    assert set(frame["parameter"]) == set(report.errors)
    assert frame["passed"].all()
    assert "PASS" in report.summary()


def test_relative_error_floor() -> None:
    assert relative_error(np.array([1e-9]), np.array([0.0])) == pytest.approx(1e-9)
    assert relative_error(np.array([100.0]), np.array([101.0])) == pytest.approx(0.01)


def test_detached_gate_feedback_changes_gate_gradient() -> None:
    rng = RngState(5)
    model = _tiny_ih_model("coffee", 3, 4, 5, rng, output_filter=False)
    tokens = rng.integers(0, 5, size=(2, 10))
    target = PredictionTarget([8, 9], rng.integers(0, 5, size=(2, 2)))
    _, full, _ = model.loss_and_grads(tokens, target)
    _, detached, _ = model.loss_and_grads(tokens, target, detach_gate_feedback=True)
    assert not np.allclose(full["ssm.w_D"], detached["ssm.w_D"])
