import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.helpers.numerics import RngState
from src.predictors.symbol_predictor import accuracy
from src.extractors.induction import (
    IH0_INITIAL_EMBEDDING,
    IH0_LEARNED_EMBEDDING,
    IHConfig,
    IHGenerationError,
    enumerate_ih0,
    format_ih_line,
    gen_ih,
    gen_ih_batch,
    gen_ih_parallel_streams,
    ih0_dataset,
    ih0_trace,
    parse_ih_line,
    validate_ih,
)
from src.training.loops import train_ih0

BLUE = [(2.69, 2.67), (-6.92, 1.2), (-6.92, -6.74), (-6.92, -6.73)]
# the middle red labels are printed with one decimal
RED = [(-0.77, -5.17), (0.92, -5.1), (-6.42, -5.14), (-6.41, -5.11)]
RED_TOL = [0.025, 0.05, 0.025, 0.025]


# -----------------------------------------------------------------------------
# CONFIG
# -----------------------------------------------------------------------------

def test_config_derived_lengths() -> None:
    cfg = IHConfig(L_seq=16, L_tri=2, L_tar=3, L_noise_between=1)
    assert cfg.total_length == 18
    assert cfg.free_noise == 16 - 4 - 3 - 1
    assert cfg.supervised_positions.tolist() == [15, 16, 17]


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"L_seq": 4, "L_tri": 2, "L_tar": 1}, "no room for noise"),
        ({"L_seq": 0}, "positive"),
        ({"pad_symbol": 1}, "pad symbol"),
        ({"trigger": (1, 2)}, "length L_tri"),
        ({"trigger": (9,)}, "not in the alphabet"),
    ],
)
def test_config_rejects_invalid_settings(kwargs, message) -> None:
    with pytest.raises(ValueError, match=message):
        IHConfig(**kwargs)


def test_trigger_is_drawn_once() -> None:
    cfg = IHConfig(L_tri=3).with_trigger(RngState(0))
    assert len(cfg.trigger) == 3
    assert cfg.with_trigger(RngState(99)).trigger == cfg.trigger


# -----------------------------------------------------------------------------
# GENERATION
# -----------------------------------------------------------------------------

@pytest.mark.parametrize(
    "cfg",
    [
        IHConfig(L_seq=16, trigger=(3,)),
        IHConfig(L_seq=8, trigger=(1,)),
        IHConfig(L_seq=16, L_noise_between=2, trigger=(5,)),
        IHConfig(L_seq=24, L_tri=2, L_tar=3, trigger=(2, 2)),
        IHConfig(L_seq=32, L_tri=3, L_tar=2, L_noise_between=1, trigger=(1, 2, 3)),
    ],
)
def test_generated_samples_are_valid(cfg) -> None:
    batch = gen_ih_batch(cfg, RngState(1), 500)
    assert batch.tokens.shape == (500, cfg.total_length)
    for sample in batch.samples():
        ok, problems = validate_ih(sample, cfg)
        assert ok, problems


def test_generation_is_reproducible() -> None:
    cfg = IHConfig(trigger=(4,))
    a = gen_ih_batch(cfg, RngState(5), 50)
    b = gen_ih_batch(cfg, RngState(5), 50)
    assert_allclose(a.tokens, b.tokens)


def test_parallel_streams_depend_only_on_seed_count_workers() -> None:
    cfg = IHConfig(trigger=(2,))
    a = gen_ih_parallel_streams(cfg, seed=3, count=101, workers=4)
    b = gen_ih_parallel_streams(cfg, seed=3, count=101, workers=4)
    assert len(a) == 101
    assert_allclose(a.tokens, b.tokens)
    assert all(validate_ih(s, cfg)[0] for s in a.samples())


def test_first_trigger_position_covers_its_range() -> None:
    cfg = IHConfig(L_seq=8, trigger=(1,))
    starts = gen_ih_batch(cfg, RngState(0), 2000).first_starts
    assert set(starts.tolist()) == set(range(cfg.free_noise + 1))


@pytest.mark.parametrize("L_seq", [64, 128, 256])
def test_long_sequences_with_a_single_symbol_trigger(L_seq) -> None:
    cfg = IHConfig(L_seq=L_seq, trigger=(3,))
    batch = gen_ih_batch(cfg, RngState(0), 16)
    assert (batch.tokens == 3).sum(axis=1).tolist() == [2] * 16
    for sample in batch.samples():
        ok, problems = validate_ih(sample, cfg)
        assert ok, problems


def test_long_sequences_with_a_two_symbol_trigger() -> None:
    cfg = IHConfig(L_seq=256, L_tri=2, trigger=(3, 5))
    batch = gen_ih_batch(cfg, RngState(0), 8)
    assert all(validate_ih(s, cfg)[0] for s in batch.samples())


def test_target_symbols_are_roughly_uniform() -> None:
    cfg = IHConfig(trigger=(1,))
    targets = gen_ih_batch(cfg, RngState(0), 20000).targets.ravel()
    counts = np.bincount(targets, minlength=8)[2:]
    assert counts.min() / counts.sum() > 0.14


def test_random_predictor_floor() -> None:
    cfg = IHConfig(trigger=(6,))
    rng = RngState(8)
    batch = gen_ih_batch(cfg, rng, 20000)
    guesses = np.asarray(cfg.alphabet)[rng.integers(0, 7, size=batch.targets.shape)]
    assert accuracy(guesses, batch.targets) == pytest.approx(1 / 7, abs=0.02)


def test_generation_needs_a_trigger() -> None:
    with pytest.raises(ValueError, match="trigger is unset"):
        gen_ih_batch(IHConfig(), RngState(0), 1)


def test_generation_fails_when_only_the_trigger_exists() -> None:
    cfg = IHConfig(alphabet=(1,), trigger=(1,))
    with pytest.raises(IHGenerationError):
        gen_ih_batch(cfg, RngState(0), 1)


def test_generation_gives_up_on_impossible_configs() -> None:
    # a two-symbol alphabet with trigger (1, 2) and a long body almost never avoids the trigger
    cfg = IHConfig(L_seq=200, L_tri=2, alphabet=(1, 2), trigger=(1, 2))
    with pytest.raises(IHGenerationError, match="Rejected"):
        gen_ih_batch(cfg, RngState(0), 2, max_rejections=3)


# -----------------------------------------------------------------------------
# VALIDATION AND TEXT FORMAT
# -----------------------------------------------------------------------------

def test_validate_flags_a_third_trigger() -> None:
    cfg = IHConfig(L_seq=8, trigger=(1,))
    ok, problems = validate_ih([1, 2, 3, 1, 4, 5, 6, 1], cfg)
    assert not ok
    assert any("3 times" in p for p in problems)


def test_validate_flags_wrong_ending_and_length() -> None:
    cfg = IHConfig(L_seq=8, trigger=(1,))
    assert not validate_ih([2, 1, 3, 4, 5, 6, 7, 2], cfg)[0]
    assert not validate_ih([1, 2, 1], cfg)[0]


def test_validate_checks_the_stated_target() -> None:
    cfg = IHConfig(L_seq=8, trigger=(1,))
    seq = [4, 1, 2, 5, 6, 7, 3, 1]
    assert validate_ih(seq, cfg, target=(2,))[0]
    assert not validate_ih(seq, cfg, target=(3,))[0]


def test_text_line_round_trip() -> None:
    sample = gen_ih(IHConfig(L_seq=10, L_tar=2, trigger=(7,)), RngState(3))
    tokens, target = parse_ih_line(format_ih_line(sample.tokens, sample.target))
    assert tokens.tolist() == sample.tokens.tolist()
    assert target == sample.target


def test_malformed_text_line() -> None:
    with pytest.raises(ValueError, match="Malformed"):
        parse_ih_line("1,2,x;3")


# -----------------------------------------------------------------------------
# IH0
# -----------------------------------------------------------------------------

def test_ih0_has_eight_sequences() -> None:
    seqs = enumerate_ih0()
    assert len(seqs) == 8
    assert ((1, 2, 3, 1), 2) in seqs
    assert ((3, 1, 2, 1), 2) in seqs
    tokens, target = ih0_dataset()
    assert tokens.shape == (8, 4) and target.positions.tolist() == [3]


def test_ih0_blue_trajectory() -> None:
    states = ih0_trace(IH0_LEARNED_EMBEDDING, [1, 2, 3, 1])
    assert_allclose(states, BLUE, atol=0.02)


def test_ih0_red_trajectory() -> None:
    states = ih0_trace(IH0_LEARNED_EMBEDDING, [3, 1, 2, 1])
    for k, (point, tol) in enumerate(zip(RED, RED_TOL)):
        assert_allclose(states[k], point, atol=tol, err_msg=f"k={k}")


def test_learned_embedding_solves_ih0(ih0_model) -> None:
    tokens, target = ih0_dataset(ih0_model.vocab)
    _, acc = ih0_model.evaluate(tokens, target)
    assert acc == 1.0


def test_ih0_training_reaches_full_accuracy() -> None:
    result = train_ih0()
    assert result.accuracy == 1.0
    assert result.steps < 2000
    assert result.history["accuracy"].iloc[-1] == 1.0


def test_ih0_training_starts_from_the_initial_embedding() -> None:
    result = train_ih0(max_steps=0)
    assert result.embedding == {s: tuple(map(float, v)) for s, v in IH0_INITIAL_EMBEDDING.items()}
