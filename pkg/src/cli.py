"""
Command-line entry point.

    python -m src.cli <command> [options]

Training commands resolve a preset (data/presets.json), an optional JSON
config file and explicit flags, in that order of precedence, write the
effective config to ``<out>/config.json`` and train. Every other command is
a single verification or inspection step.

Exit codes: 0 contract met, 1 contract failed (gradcheck above tolerance,
``--assert`` threshold missed, harness failure), 2 bad usage or config,
3 missing data.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import psutil

try:
    from src.helpers.numerics import RngState, resolve_dtype
    from src.models.helpers import block_params
    from src.predictors.sequence_predictor import IHModel
    from src.predictors.symbol_predictor import EmbeddingTable, Vocab
    from src.extractors.induction import (
        IHConfig, IH0_INITIAL_EMBEDDING, IH0_LEARNED_EMBEDDING, IHGenerationError,
        format_ih_line, gen_ih_batch, gen_ih_parallel_streams, ih0_dataset, ih0_params,
        ih0_table, ih0_trace, ih0_vocab,
    )
    from src.extractors.mnist_extractor import MnistFormatError, crop_25, mnist_load
    from src.training import (
        CheckpointError, NonFiniteGradientError, checkpoint_from_model, grad_check,
        head_grad_check, load_checkpoint, model_from_checkpoint, save_checkpoint,
        train_ih, train_ih0, train_mnist, train_smnist,
    )
    from src.training.loops import EVAL_SEED_XOR
    from src.utils.presets import (
        RunConfig, UnknownPresetError, build_run_config, get_preset, load_presets,
    )
    from src.utils.validation import (
        canonical_checks, check_expectations, fixed_point_checks, jacobian_checks,
        linearization_order_check, param_count, report_table, scan_checks, to_markdown,
    )
except ImportError:
    from helpers.numerics import RngState, resolve_dtype
    from models.helpers import block_params
    from predictors.sequence_predictor import IHModel
    from predictors.symbol_predictor import EmbeddingTable, Vocab
    from extractors.induction import (
        IHConfig, IH0_INITIAL_EMBEDDING, IH0_LEARNED_EMBEDDING, IHGenerationError,
        format_ih_line, gen_ih_batch, gen_ih_parallel_streams, ih0_dataset, ih0_params,
        ih0_table, ih0_trace, ih0_vocab,
    )
    from extractors.mnist_extractor import MnistFormatError, crop_25, mnist_load
    from training import (
        CheckpointError, NonFiniteGradientError, checkpoint_from_model, grad_check,
        head_grad_check, load_checkpoint, model_from_checkpoint, save_checkpoint,
        train_ih, train_ih0, train_mnist, train_smnist,
    )
    from training.loops import EVAL_SEED_XOR
    from utils.presets import (
        RunConfig, UnknownPresetError, build_run_config, get_preset, load_presets,
    )
    from utils.validation import (
        canonical_checks, check_expectations, fixed_point_checks, jacobian_checks,
        linearization_order_check, param_count, report_table, scan_checks, to_markdown,
    )

log = logging.getLogger("src.cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
GEN_CHUNK = 10_000


class ContractFailure(Exception):
    """The command ran but its check did not pass."""


# =============================================================================
# LOGGING
# =============================================================================

def setup_logging(verbose: bool = False, quiet: bool = False, log_file: Optional[Path] = None) -> None:
    """Configure the root logger once: console, plus ``log_file`` when given."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    root.setLevel(level)
    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(formatter)
    root.addHandler(console)
    if log_file is not None:
        add_log_file(log_file)


def add_log_file(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)


# =============================================================================
# SHARED HELPERS
# =============================================================================

def default_threads() -> int:
    return psutil.cpu_count(logical=True) or 1


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise ValueError(f"Expected comma-separated integers, got '{text}'") from None


def parse_embedding(text: str) -> Dict[int, tuple]:
    """'learned', 'initial' or 'x,y;x,y;x,y' for symbols 1, 2, 3."""
    key = text.strip().lower()
    if key == "learned":
        return dict(IH0_LEARNED_EMBEDDING)
    if key == "initial":
        return dict(IH0_INITIAL_EMBEDDING)
    rows = [r for r in text.split(";") if r.strip()]
    if len(rows) != 3:
        raise ValueError(f"Embedding needs 3 rows 'x,y;x,y;x,y', got '{text}'")
    out = {}
    for symbol, row in zip((1, 2, 3), rows):
        try:
            x, y = (float(v) for v in row.split(","))
        except ValueError:
            raise ValueError(f"Embedding row '{row}' is not 'x,y'") from None
        out[symbol] = (x, y)
    return out


def run_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values that override preset and config file settings."""
    train: Dict[str, Any] = {}
    if args.seed is not None:
        train["seed"] = args.seed
    if args.threads is not None:
        train["threads"] = args.threads
    if getattr(args, "epochs", None) is not None:
        train["max_epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        train["lr"] = args.lr
    out: Dict[str, Any] = {}
    if train:
        out["train"] = train
    if args.deterministic:
        out["deterministic"] = True
    if args.f32:
        out["f32"] = True
    return out


def finalize_threads(run: RunConfig, explicit: Optional[int]) -> RunConfig:
    """--deterministic forces one worker; otherwise default to all logical CPUs."""
    if run.deterministic:
        threads = 1
    elif explicit is not None:
        threads = explicit
    elif run.train.threads > 1:
        threads = run.train.threads
    else:
        threads = default_threads()
    data = run.to_dict()
    data["train"]["threads"] = threads
    return RunConfig.from_dict(data)


def run_dir_for(args: argparse.Namespace, run: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    name = run.preset or run.task
    return Path("runs") / f"{name}-seed{run.seed}"


# =============================================================================
# TRAINING COMMANDS
# =============================================================================

def _train(args: argparse.Namespace, task: str) -> int:
    run = build_run_config(args.preset, args.config, run_overrides(args), task=task)
    run = finalize_threads(run, args.threads)
    out = run_dir_for(args, run)
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "config.json")
    add_log_file(out / "log.txt")
    log.info("Run %s (%s) -> %s", run.preset or task, run.description or "custom", out)

    dtype = resolve_dtype(run.f32)
    common = dict(
        out_dir=out,
        progress=not args.quiet,
        deterministic=run.deterministic,
        dtype=dtype,
        config_snapshot=run.to_dict(),
    )
    if task == "ih":
        result = train_ih(run.model, run.ih, run.train, **common)
    elif task == "mnist":
        result = train_mnist(run.model, run.train, augment=run.augment, data_dir=args.data_dir, **common)
    else:
        result = train_smnist(run.model, run.train, augment=run.augment, data_dir=args.data_dir, **common)

    print(f"best eval accuracy {result.best_accuracy:.4f} at epoch {result.best_epoch} ({result.epochs_run} epochs)")
    if result.test is not None:
        print(f"test loss {result.test[0]:.4f} accuracy {result.test[1]:.4f}")
    if args.assert_expect:
        ok, problems = check_expectations(run.expect, result.metrics)
        for problem in problems:
            log.error(problem)
        if not ok:
            raise ContractFailure(f"{run.preset or task} missed its thresholds")
        if not run.expect:
            log.warning("--assert given but %s has no thresholds", run.preset or task)
    return EXIT_OK


def cmd_train_ih(args):
    return _train(args, "ih")


def cmd_train_mnist(args):
    return _train(args, "mnist")


def cmd_train_smnist(args):
    return _train(args, "smnist")


# =============================================================================
# EVAL
# =============================================================================

def ih_eval_set(config: Dict[str, Any], vocab: Vocab):
    """Regenerate the eval stream a training run used from its saved config."""
    run = RunConfig.from_dict(config)
    ih = run.ih.with_trigger(RngState(run.seed).split(2))
    eval_seed = run.seed ^ EVAL_SEED_XOR
    return gen_ih_batch(ih, RngState(eval_seed), run.train.eval_size).encoded(vocab)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dtype = resolve_dtype(args.f32)
    model = model_from_checkpoint(ckpt, dtype=dtype)
    if ckpt.task == "ih":
        tokens, target = ih_eval_set(ckpt.config, model.vocab)
        loss, acc = model.evaluate(tokens, target, mode=args.mode)
        split = "eval"
    else:
        seed = ckpt.config.get("train", {}).get("seed", 0)
        data = mnist_load(args.data_dir, seed=seed)
        images = data.test.images.astype(dtype) / 255.0
        if ckpt.task == "mnist":
            images = crop_25(images)
        loss, acc = model.evaluate(images, data.test.labels.astype(np.int64))
        split = "test"
    print(f"{ckpt.task} {ckpt.model} n={ckpt.n} D={ckpt.D}: {split} loss {loss:.4f} accuracy {acc:.4f}")
    return EXIT_OK


# =============================================================================
# VERIFICATION COMMANDS
# =============================================================================

def cmd_gradcheck(args) -> int:
    reports = []
    for trial in range(args.trials):
        reports.append(grad_check(
            kind=args.model, n=args.n, D=args.D, L=args.L, vocab_size=args.vocab,
            seed=args.seed + trial, output_filter=args.filter,
        ))
    if args.head:
        reports.extend(head_grad_check(seed=args.seed + t) for t in range(args.trials))
    for report in reports:
        print(report.summary())
        if args.verbose:
            print(report.to_frame().to_string(index=False))
    failed = [r for r in reports if not r.passed]
    if failed:
        raise ContractFailure(f"{len(failed)} of {len(reports)} gradient checks above tolerance")
    return EXIT_OK


def cmd_ih0_trace(args) -> int:
    embedding = parse_embedding(args.embedding)
    sequence = parse_int_list(args.seq)
    states = ih0_trace(embedding, sequence)
    frame = pd.DataFrame(
        {"k": np.arange(len(sequence)), "token": sequence, "x1": states[:, 0], "x2": states[:, 1]}
    )
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.3f}"))

    model = IHModel(vocab=ih0_vocab(), embedding=EmbeddingTable(ih0_table(embedding)), ssm=ih0_params())
    tokens, target = ih0_dataset(model.vocab)
    pred = model.vocab.decode(model.predict(model.vocab.encode([sequence]), [len(sequence) - 1]))[0, 0]
    _, acc = model.evaluate(tokens, target)
    print(f"prediction {pred}; accuracy on all IH0 sequences {acc:.3f}")
    return EXIT_OK


def cmd_ih0_train(args) -> int:
    initial = parse_embedding(args.embedding) if args.embedding else None
    result = train_ih0(initial=initial, lr=args.lr, max_steps=args.max_steps, extra_steps=args.extra_steps)
    for symbol, (x, y) in result.embedding.items():
        print(f"emb({symbol}) = [{x:.3f}, {y:.3f}]")
    print(f"steps {result.steps} loss {result.loss:.4f} accuracy {result.accuracy:.3f}")
    if result.accuracy < 1.0:
        raise ContractFailure(f"IH0 training stopped at accuracy {result.accuracy:.3f}")
    return EXIT_OK


def cmd_canon(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.task != "ih":
        raise ValueError(f"canon needs an induction-head checkpoint, got task '{ckpt.task}'")
    model = model_from_checkpoint(ckpt)
    pivot = args.pivot if args.pivot is not None else model.vocab.alphabet[0]
    canonical = model.canonicalize(pivot)

    rng = RngState(args.seed)
    tokens = rng.integers(0, len(model.vocab), size=(args.sequences, args.length))
    error = float(np.max(np.abs(model.ssm_outputs(tokens) - canonical.ssm_outputs(tokens))))
    print(f"pivot {pivot}: max output difference {error:.3e} (tol {args.tol:.0e})")
    if args.output:
        saved = checkpoint_from_model(canonical, config=ckpt.config, metrics=ckpt.metrics, seeds=ckpt.seeds)
        save_checkpoint(saved, args.output)
        print(f"canonical checkpoint written to {args.output}")
    if error > args.tol:
        raise ContractFailure("canonical form changes the layer outputs")
    return EXIT_OK


def cmd_scan_check(args) -> int:
    frames = [
        scan_checks(seed=args.seed),
        fixed_point_checks(seed=args.seed),
        jacobian_checks(seed=args.seed),
        canonical_checks(seed=args.seed),
    ]
    checks = pd.concat(frames, ignore_index=True)
    order = linearization_order_check(seed=args.seed)
    if args.verbose:
        print(checks.to_string(index=False))
        print(order.to_string(index=False))
    summary = checks.groupby("check", sort=False).agg(cases=("passed", "size"), passed=("passed", "sum"), max_error=("error", "max"))
    print(summary.to_string())
    print(
        f"linearization: {int(order['passed'].sum())}/{len(order)} ratios in [3.5, 4.5] "
        f"(median {order['ratio'].median():.3f})"
    )
    if not (checks["passed"].all() and order["passed"].all()):
        raise ContractFailure("verification harness failed")
    return EXIT_OK


# =============================================================================
# GENERATION, COUNTS, REPORT
# =============================================================================

def cmd_gen_ih(args) -> int:
    if args.preset or args.config:
        ih = build_run_config(args.preset, args.config, task="ih").ih
    else:
        ih = IHConfig(L_seq=args.L_seq, L_tri=args.L_tri, L_tar=args.L_tar, L_noise_between=args.L_noise_between)
    seed = args.seed if args.seed is not None else ih.seed
    ih = ih.with_trigger(RngState(seed).split(2))
    log.info("Generating %d sequences, trigger %s", args.count, ih.trigger)

    stream = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        if args.workers > 1:
            batches = [gen_ih_parallel_streams(ih, seed + 1, args.count, args.workers)]
        else:
            rng = RngState(seed).split(1)
            batches = (
                gen_ih_batch(ih, rng, min(GEN_CHUNK, args.count - start))
                for start in range(0, args.count, GEN_CHUNK)
            )
        for batch in batches:
            for sample in batch.samples():
                stream.write(format_ih_line(sample.tokens, sample.target) + "\n")
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_OK


def count_table(names: List[str]) -> pd.DataFrame:
    rows = []
    for name in names:
        cfg = get_preset(name)
        model = cfg.get("model", {})
        rows.append({
            "preset": cfg["preset"],
            "task": cfg.get("task", "ih"),
            "model": model.get("kind", "coffee"),
            "n": model.get("n", 8),
            "filter": bool(model.get("output_filter", False)),
            "params": param_count(cfg),
        })
    return pd.DataFrame(rows)


def cmd_count_params(args) -> int:
    if args.all:
        print(count_table(sorted(load_presets())).to_string(index=False))
        return EXIT_OK
    if args.preset:
        print(int(count_table([args.preset])["params"].iloc[0]))
        return EXIT_OK
    config = {
        "task": args.task,
        "model": {
            "kind": args.model, "n": args.n, "D": args.D, "vocab_size": args.vocab,
            "output_filter": args.filter, "use_ssm": args.model != "none",
        },
    }
    if args.model == "none":
        config["model"]["kind"] = "coffee"
    elif args.task == "ih":
        log.info("SSM block: %d", block_params(args.model, args.n, args.D, args.filter))
    print(param_count(config))
    return EXIT_OK


def cmd_report(args) -> int:
    run_dirs = [Path(p) for p in args.runs]
    expanded = []
    for path in run_dirs:
        if (path / "metrics.csv").exists():
            expanded.append(path)
        else:
            expanded.extend(sorted(p.parent for p in path.glob("*/metrics.csv")))
    if not expanded:
        raise FileNotFoundError(f"No run directories with metrics.csv under {', '.join(map(str, run_dirs))}")
    table = report_table(expanded)
    print(to_markdown(table))
    csv_path = Path(args.csv)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(csv_path, index=False)
    log.info("Wrote %s (%d rows)", csv_path, len(table))
    return EXIT_OK


# =============================================================================
# PARSER
# =============================================================================

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (overrides the preset)")
    p.add_argument("--preset", help="Named preset from data/presets.json, e.g. table1-coffee")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="Run directory (default runs/<preset>-seed<seed>)")
    p.add_argument("--threads", type=int, default=None, help="Gradient workers (default: logical CPUs)")
    p.add_argument("--deterministic", action="store_true", help="One worker, fixed reduction order, wall_ms = 0")
    p.add_argument("--assert", dest="assert_expect", action="store_true", help="Fail unless the preset thresholds are met")
    p.add_argument("--f32", action="store_true", help="32-bit floats")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src.cli", description="COFFEE / S6 state-space models")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_text in (
        ("train-ih", cmd_train_ih, "Train on the induction-head task"),
        ("train-mnist", cmd_train_mnist, "Train the four-view MNIST model"),
        ("train-smnist", cmd_train_smnist, "Train on sequential MNIST"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--epochs", type=int, default=None, help="Override max_epochs")
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--data-dir", default=None, help="MNIST directory (default $COFFEE_MNIST_DIR)")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--mode", choices=["per-sequence", "per-position"], default="per-sequence")
    p.add_argument("--data-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="Backward pass against central finite differences")
    _common(p)
    p.add_argument("--model", choices=["coffee", "s6", "linearized"], default="coffee")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--D", type=int, default=4)
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--vocab", type=int, default=5)
    p.add_argument("--filter", action="store_true", help="COFFEE output filtering")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--head", action="store_true", help="Also check the MNIST classifier head")
    p.set_defaults(func=cmd_gradcheck, seed=0)

    p = sub.add_parser("ih0-trace", help="States of the hand-designed IH0 integrator")
    _common(p)
    p.add_argument("--seq", default="1,2,3,1")
    p.add_argument("--embedding", default="learned", help="learned | initial | 'x,y;x,y;x,y'")
    p.set_defaults(func=cmd_ih0_trace)

    p = sub.add_parser("ih0-train", help="Learn the IH0 embedding only")
    _common(p)
    p.add_argument("--embedding", default=None, help="Starting embedding (default: initial)")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--max-steps", type=int, default=2000)
    p.add_argument("--extra-steps", type=int, default=0)
    p.set_defaults(func=cmd_ih0_train)

    p = sub.add_parser("canon", help="Canonical form of a COFFEE checkpoint")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--pivot", type=int, default=None, help="Pivot symbol (default: first alphabet symbol)")
    p.add_argument("--output", default=None, help="Write the canonical checkpoint here")
    p.add_argument("--sequences", type=int, default=20)
    p.add_argument("--length", type=int, default=16)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_canon, seed=0)

    p = sub.add_parser("scan-check", help="Parallel evaluation and canonical form harnesses")
    _common(p)
    p.set_defaults(func=cmd_scan_check, seed=0)

    p = sub.add_parser("gen-ih", help="Write induction-head samples as text lines")
    _common(p)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--L-seq", dest="L_seq", type=int, default=16)
    p.add_argument("--L-tri", dest="L_tri", type=int, default=1)
    p.add_argument("--L-tar", dest="L_tar", type=int, default=1)
    p.add_argument("--L-noise-between", dest="L_noise_between", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output", default=None, help="Output file (default stdout)")
    p.set_defaults(func=cmd_gen_ih)

    p = sub.add_parser("count-params", help="Closed-form parameter counts")
    _common(p)
    p.add_argument("--all", action="store_true", help="Table of every preset")
    p.add_argument("--task", choices=["ih", "mnist", "smnist"], default="ih")
    p.add_argument("--model", choices=["coffee", "s6", "linearized", "none"], default="coffee")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--vocab", type=int, default=8)
    p.add_argument("--filter", action="store_true")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("report", help="Aggregate run directories into a results table")
    _common(p)
    p.add_argument("runs", nargs="+", help="Run directories, or parents of run directories")
    p.add_argument("--csv", default="report.csv")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(verbose=args.verbose, quiet=args.quiet)
    try:
        return args.func(args)
    except ContractFailure as exc:
        log.error("%s", exc)
        return EXIT_FAILED
    except (FileNotFoundError, MnistFormatError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except UnknownPresetError as exc:
        log.error("%s", exc.args[0] if exc.args else exc)
        return EXIT_CONFIG
    except NonFiniteGradientError as exc:
        log.error("Training diverged: %s", exc)
        return EXIT_FAILED
    except (CheckpointError, IHGenerationError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
