import json

import pandas as pd
import pytest

from src.extractors.induction import gen_ih_batch, validate_ih
from src.helpers.numerics import RngState
from src.utils.presets import (
    RunConfig,
    UnknownPresetError,
    build_run_config,
    canonicalize_preset,
    get_preset,
    load_presets,
)
from src.utils.validation import check_expectations, param_count, report_table, to_markdown


# -----------------------------------------------------------------------------
# NAMES
# -----------------------------------------------------------------------------

@pytest.mark.parametrize(
    "name, expected",
    [
        ("Table7_Coffee", "table7-coffee"),
        ("mnist-s6", "table7-s6-n2"),
        ("ih", "table1-coffee"),
        ("IH L64", "table6-L64"),
        ("smnist ablation", "smnist-nossm"),
        ("table2", "table2"),
    ],
)
def test_canonicalize_preset(name, expected) -> None:
    assert canonicalize_preset(name) == expected


def test_get_preset_is_case_insensitive() -> None:
    assert get_preset("TABLE6-L128")["preset"] == "table6-L128"


def test_unknown_preset_lists_known_names() -> None:
    with pytest.raises(UnknownPresetError) as info:
        get_preset("table99")
    assert "table1-coffee" in str(info.value)
    assert isinstance(info.value, KeyError)


@pytest.mark.parametrize("name", sorted(load_presets()))
def test_every_preset_builds(name) -> None:
    run = build_run_config(name)
    assert run.preset == name
    if run.task == "ih":
        assert run.ih is not None and run.augment is None
    else:
        assert run.augment is not None


@pytest.mark.parametrize("name", [n for n in sorted(load_presets()) if n.startswith("table6-")])
def test_length_sweep_presets_generate_valid_data(name) -> None:
    ih = build_run_config(name).ih.with_trigger(RngState(0).split(2))
    batch = gen_ih_batch(ih, RngState(1), 64)
    assert batch.tokens.shape == (64, ih.total_length)
    for sample in batch.samples():
        ok, problems = validate_ih(sample, ih)
        assert ok, problems


@pytest.mark.parametrize(
    "name, expected",
    [
        ("table7-coffee", 3385),
        ("table7-coffee-filter", 3585),
        ("table7-s6-n2", 5885),
        ("table7-s6-n16", 10085),
        ("smnist", 7874),
        ("smnist-nossm", 7850),
        ("table1-coffee", 512),
        ("table1-s6", 768),
        ("table2", 99),
    ],
)
def test_preset_parameter_counts(name, expected) -> None:
    assert param_count(get_preset(name)) == expected


# -----------------------------------------------------------------------------
# RUN CONFIG
# -----------------------------------------------------------------------------

def test_layer_precedence(tmp_path) -> None:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": {"lr": 0.05, "batch_size": 16}, "ih": {"L_seq": 12}}))

    preset_only = build_run_config("smoke-ih")
    assert preset_only.train.lr == 0.01 and preset_only.ih.L_seq == 8

    with_file = build_run_config("smoke-ih", path)
    assert with_file.train.lr == 0.05
    assert with_file.train.batch_size == 16
    assert with_file.train.steps_per_epoch == 200
    assert with_file.ih.L_seq == 12

    with_flags = build_run_config("smoke-ih", path, {"train": {"lr": 0.1}})
    assert with_flags.train.lr == 0.1 and with_flags.train.batch_size == 16


def test_task_mismatch() -> None:
    with pytest.raises(ValueError, match="task"):
        build_run_config("smoke-ih", task="mnist")


def test_bad_config_files(tmp_path) -> None:
    with pytest.raises(FileNotFoundError):
        build_run_config(config_path=tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ValueError, match="not valid JSON"):
        build_run_config(config_path=broken)
    typo = tmp_path / "typo.json"
    typo.write_text(json.dumps({"train": {"learning_rate": 1}}))
    with pytest.raises(ValueError, match="Unknown TrainConfig keys"):
        build_run_config(config_path=typo)


def test_run_config_round_trip(tmp_path) -> None:
    for name in ("table3-noise2", "table7-coffee-filter"):
        run = build_run_config(name, overrides={"deterministic": True, "train": {"seed": 4}})
        path = run.write(tmp_path / name / "config.json")
        assert RunConfig.from_dict(json.loads(path.read_text())) == run


# -----------------------------------------------------------------------------
# THRESHOLDS AND REPORTS
# -----------------------------------------------------------------------------

def _metrics(eval_acc, test_acc=None) -> pd.DataFrame:
    rows = []
    for epoch, acc in enumerate(eval_acc, start=1):
        rows.append({"epoch": epoch, "step": epoch * 10, "split": "train", "loss": 1.0 / epoch, "accuracy": acc, "lr": 0.01, "wall_ms": 0})
        rows.append({"epoch": epoch, "step": epoch * 10, "split": "eval", "loss": 1.0 / epoch, "accuracy": acc, "lr": 0.01, "wall_ms": 0})
    if test_acc is not None:
        rows.append({"epoch": 1, "step": 99, "split": "test", "loss": 0.3, "accuracy": test_acc, "lr": 0.01, "wall_ms": 0})
    return pd.DataFrame(rows)


def test_expectations_met_and_missed() -> None:
    ok, problems = check_expectations({"accuracy": 0.9}, _metrics([0.5, 0.95, 0.7]))
    assert ok and problems == []

    ok, problems = check_expectations({"accuracy": 0.99, "test_accuracy": 0.5}, _metrics([0.5, 0.6]))
    assert not ok
    assert len(problems) == 2

    ok, _ = check_expectations({}, _metrics([0.1]))
    assert ok


def _write_run(directory, preset, seed, eval_acc, test_acc=None, task="ih", model=None):
    directory.mkdir(parents=True)
    config = {
        "task": task, "preset": preset,
        "model": model or {"kind": "coffee", "n": 8, "D": 16, "vocab_size": 8},
        "train": {"lr": 0.01, "seed": seed},
    }
    (directory / "config.json").write_text(json.dumps(config))
    _metrics(eval_acc, test_acc).to_csv(directory / "metrics.csv", index=False)


def test_report_averages_seeds(tmp_path) -> None:
    _write_run(tmp_path / "a", "table1-coffee", 0, [0.8, 1.0])
    _write_run(tmp_path / "b", "table1-coffee", 1, [0.9, 0.96])
    mnist = {"kind": "coffee", "n": 2, "D": 25}
    _write_run(tmp_path / "c", "table7-coffee", 0, [0.9], test_acc=0.97, task="mnist", model=mnist)

    table = report_table([tmp_path / "a", tmp_path / "b", tmp_path / "c", tmp_path / "missing"])
    assert len(table) == 2
    ih = table[table["Preset"] == "table1-coffee"].iloc[0]
    assert ih["Runs"] == 2
    assert ih["Accuracy"] == pytest.approx(0.98)
    assert ih["Params"] == 512
    mnist_row = table[table["Preset"] == "table7-coffee"].iloc[0]
    assert mnist_row["Accuracy"] == pytest.approx(0.97)
    assert mnist_row["Params"] == 3385

    markdown = to_markdown(table)
    lines = markdown.splitlines()
    assert lines[0].startswith("| Preset | Model |")
    assert len(lines) == 4
    assert "COFFEE" in markdown and "0.980" in markdown
