"""
Induction-head task family.

Sequences follow

    noise1 || trigger || [noise] || target || noise2 || trigger || pad ...

over the alphabet V = {1, ..., 7}. The trigger is fixed for a whole corpus and
appears exactly twice; the model must emit the target after the second
trigger. Since the last trigger is the end of the informative part, L_tar - 1
pad symbols (0) follow so every target symbol has an output position:

    position L_seq - 1          -> target[0]
    position L_seq - 1 + j      -> target[j]

Generation is rejection sampling: the layout (first-trigger start) and all
free symbols are drawn uniformly, and candidates where the trigger shows up
anywhere besides its two planted places are discarded.

Also here: the tiny IH0 variant (V = {1, 2, 3}, trigger 1, length 4, D = 2,
n = 1) with its hand-analysable trajectories.

Example:
    >>> cfg = IHConfig(L_seq=16, L_tri=1, L_tar=1, trigger=(5,))
    >>> batch = gen_ih_batch(cfg, RngState(0), 4)
    >>> batch.tokens.shape
    (4, 16)
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from src.helpers.numerics import RngState
    from src.models.coffee import CoffeeParams, coffee_forward
    from src.predictors.symbol_predictor import PredictionTarget, Vocab
except ImportError:
    from helpers.numerics import RngState
    from models.coffee import CoffeeParams, coffee_forward
    from predictors.symbol_predictor import PredictionTarget, Vocab

log = logging.getLogger(__name__)

DEFAULT_ALPHABET = (1, 2, 3, 4, 5, 6, 7)
PAD_SYMBOL = 0
MAX_REJECTIONS_PER_SAMPLE = 10_000


class IHGenerationError(RuntimeError):
    """Raised when rejection sampling cannot produce a valid sequence."""


# =============================================================================
# CONFIG AND SAMPLES
# =============================================================================

@dataclass(frozen=True)
class IHConfig:
    L_seq: int = 16
    L_tri: int = 1
    L_tar: int = 1
    L_noise_between: Optional[int] = None  # noise between trigger and target
    alphabet: Tuple[int, ...] = DEFAULT_ALPHABET
    trigger: Optional[Tuple[int, ...]] = None
    pad_symbol: int = PAD_SYMBOL
    seed: int = 0  # corpus seed for gen-ih; training derives its streams from TrainConfig.seed

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(int(s) for s in self.alphabet))
        if self.trigger is not None:
            object.__setattr__(self, "trigger", tuple(int(s) for s in self.trigger))
        if min(self.L_seq, self.L_tri, self.L_tar) < 1:
            raise ValueError(
                f"Lengths must be positive, got L_seq={self.L_seq}, L_tri={self.L_tri}, L_tar={self.L_tar}"
            )
        gap = self.gap
        if gap < 0:
            raise ValueError(f"L_noise_between must be >= 0, got {gap}")
        slack = self.L_seq - 2 * self.L_tri - self.L_tar
        if slack < max(1, gap):
            raise ValueError(
                f"L_seq - 2*L_tri - L_tar = {slack} leaves no room for noise "
                f"(need >= {max(1, gap)})"
            )
        if self.pad_symbol in self.alphabet:
            raise ValueError(f"pad symbol {self.pad_symbol} must not be in the alphabet")
        if self.trigger is not None:
            if len(self.trigger) != self.L_tri:
                raise ValueError(f"trigger {self.trigger} must have length L_tri={self.L_tri}")
            bad = sorted(set(self.trigger) - set(self.alphabet))
            if bad:
                raise ValueError(f"trigger symbols {bad} are not in the alphabet {self.alphabet}")

    @property
    def gap(self) -> int:
        return self.L_noise_between or 0

    @property
    def free_noise(self) -> int:
        """Noise symbols split between noise1 and noise2."""
        return self.L_seq - 2 * self.L_tri - self.L_tar - self.gap

    @property
    def total_length(self) -> int:
        return self.L_seq + self.L_tar - 1

    @property
    def supervised_positions(self) -> np.ndarray:
        return self.L_seq - 1 + np.arange(self.L_tar)

    def with_trigger(self, rng: RngState) -> "IHConfig":
        """Draw the corpus trigger from the alphabet if none is set."""
        if self.trigger is not None:
            return self
        picks = rng.integers(0, len(self.alphabet), size=self.L_tri)
        return replace(self, trigger=tuple(self.alphabet[i] for i in picks))


@dataclass
class IHSample:
    tokens: np.ndarray
    target: Tuple[int, ...]
    positions: np.ndarray
    trigger_starts: Tuple[int, int]


@dataclass
class IHBatch:
    """Generated sequences as symbols. tokens: (N, L_seq + L_tar - 1)."""
    tokens: np.ndarray
    targets: np.ndarray
    positions: np.ndarray
    first_starts: np.ndarray
    config: IHConfig = field(repr=False)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def sample(self, i: int) -> IHSample:
        cfg = self.config
        return IHSample(
            tokens=self.tokens[i].copy(),
            target=tuple(int(s) for s in self.targets[i]),
            positions=self.positions.copy(),
            trigger_starts=(int(self.first_starts[i]), cfg.L_seq - cfg.L_tri),
        )

    def samples(self) -> Iterator[IHSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def encoded(self, vocab: Vocab) -> Tuple[np.ndarray, PredictionTarget]:
        """Row-index tokens and the matching PredictionTarget."""
        return vocab.encode(self.tokens), PredictionTarget(self.positions, vocab.encode(self.targets))


# =============================================================================
# GENERATION
# =============================================================================

def _count_occurrences(tokens: np.ndarray, trigger: Tuple[int, ...]) -> np.ndarray:
    """Contiguous (possibly overlapping) trigger occurrences per row."""
    windows = sliding_window_view(tokens, len(trigger), axis=-1)
    return np.all(windows == np.asarray(trigger), axis=-1).sum(axis=-1)


def gen_ih_batch(
    config: IHConfig,
    rng: RngState,
    count: int,
    max_rejections: int = MAX_REJECTIONS_PER_SAMPLE,
) -> IHBatch:
    """
    Draw ``count`` well-formed sequences.

    The first trigger start n1 is uniform on [0, free_noise]. With a
    single-symbol trigger every noise and target symbol is uniform on the
    alphabet minus the trigger, which is exactly the alphabet-uniform draw
    conditioned on two occurrences. Longer triggers draw from the whole
    alphabet and reject candidates with any occurrence beyond the two
    planted ones.

    Raises:
        ValueError: If the config has no trigger yet
        IHGenerationError: After more than ``max_rejections`` rejections per
            requested sample
    """
    cfg = config
    if cfg.trigger is None:
        raise ValueError("IHConfig.trigger is unset; call config.with_trigger(rng) first")
    if cfg.L_tri == 1 and set(cfg.alphabet) == set(cfg.trigger):
        raise IHGenerationError(f"Alphabet {cfg.alphabet} only contains the trigger; no noise is possible")

    alphabet = np.asarray(cfg.alphabet)
    if cfg.L_tri == 1:
        alphabet = alphabet[alphabet != cfg.trigger[0]]
    trigger = np.asarray(cfg.trigger)
    tri_offsets = np.arange(cfg.L_tri)
    tar_offsets = np.arange(cfg.L_tar)

    kept_tokens: List[np.ndarray] = []
    kept_first: List[np.ndarray] = []
    have, rejected = 0, 0
    while have < count:
        draw = max(2 * (count - have), 64)
        n1 = rng.integers(0, cfg.free_noise + 1, size=draw)
        body = alphabet[rng.integers(0, alphabet.size, size=(draw, cfg.L_seq))]
        rows = np.arange(draw)[:, None]
        body[rows, n1[:, None] + tri_offsets] = trigger
        body[:, cfg.L_seq - cfg.L_tri:] = trigger

        ok = _count_occurrences(body, cfg.trigger) == 2
        take = np.flatnonzero(ok)[: count - have]
        kept_tokens.append(body[take])
        kept_first.append(n1[take])
        have += take.size
        rejected += int((~ok).sum())
        if have < count and rejected > max_rejections * count:
            raise IHGenerationError(
                f"Rejected {rejected} candidates for {count} samples; "
                f"config {cfg} admits (almost) no valid sequence"
            )

    body = np.concatenate(kept_tokens)
    first = np.concatenate(kept_first)
    target_idx = first[:, None] + cfg.L_tri + cfg.gap + tar_offsets
    targets = np.take_along_axis(body, target_idx, axis=1)
    pad = np.full((count, cfg.L_tar - 1), cfg.pad_symbol, dtype=body.dtype)
    return IHBatch(
        tokens=np.concatenate([body, pad], axis=1),
        targets=targets,
        positions=cfg.supervised_positions,
        first_starts=first,
        config=cfg,
    )


def gen_ih(config: IHConfig, rng: RngState) -> IHSample:
    """A single well-formed sample (see ``gen_ih_batch``)."""
    return gen_ih_batch(config, rng, 1).sample(0)


def gen_ih_parallel_streams(config: IHConfig, seed: int, count: int, workers: int) -> IHBatch:
    """
    Split generation over ``workers`` independent streams seeded seed + w.

    The result is the concatenation in worker order, so it depends only on
    (seed, count, workers).
    """
    base = RngState(seed)
    sizes = [count // workers + (1 if w < count % workers else 0) for w in range(workers)]
    parts = [gen_ih_batch(config, base.split(w), s) for w, s in enumerate(sizes) if s > 0]
    return IHBatch(
        tokens=np.concatenate([p.tokens for p in parts]),
        targets=np.concatenate([p.targets for p in parts]),
        positions=config.supervised_positions,
        first_starts=np.concatenate([p.first_starts for p in parts]),
        config=config,
    )


# =============================================================================
# VALIDATION
# =============================================================================

def _occurrences(seq: np.ndarray, trigger: Tuple[int, ...]) -> List[int]:
    if seq.size < len(trigger):
        return []
    windows = sliding_window_view(seq, len(trigger))
    return np.flatnonzero(np.all(windows == np.asarray(trigger), axis=-1)).tolist()


def validate_ih(
    sample: Union[IHSample, Sequence[int]],
    config: IHConfig,
    target: Optional[Sequence[int]] = None,
) -> Tuple[bool, List[str]]:
    """
    Check every structural rule of the task on one sequence.

    Args:
        sample: IHSample or a raw token sequence (with padding)
        config: Task configuration, trigger included
        target: Expected target when ``sample`` is a raw sequence

    Returns:
        (ok, violations) where violations lists human-readable problems
    """
    if isinstance(sample, IHSample):
        tokens = np.asarray(sample.tokens)
        target = sample.target
    else:
        tokens = np.asarray(sample)
    cfg = config
    problems: List[str] = []
    if cfg.trigger is None:
        return False, ["config has no trigger"]

    if tokens.size != cfg.total_length:
        problems.append(f"length {tokens.size} != L_seq + L_tar - 1 = {cfg.total_length}")
        return False, problems

    body, pad = tokens[: cfg.L_seq], tokens[cfg.L_seq:]
    if np.any(pad != cfg.pad_symbol):
        problems.append(f"padding {pad.tolist()} is not all {cfg.pad_symbol}")
    outside = sorted(set(body.tolist()) - set(cfg.alphabet))
    if outside:
        problems.append(f"symbols {outside} outside the alphabet")

    second = cfg.L_seq - cfg.L_tri
    if tuple(body[second:].tolist()) != cfg.trigger:
        problems.append(f"sequence does not end with the trigger {cfg.trigger}")

    found = _occurrences(body, cfg.trigger)
    if len(found) != 2:
        problems.append(f"trigger occurs {len(found)} times at {found}, expected 2")
    if not found:
        return False, problems

    first = found[0]
    t0 = first + cfg.L_tri + cfg.gap
    t1 = t0 + cfg.L_tar
    if t1 > second:
        problems.append(f"target span [{t0}, {t1}) overlaps the final trigger at {second}")
    else:
        segments = {
            "noise1": body[:first],
            "inner noise": body[first + cfg.L_tri:t0],
            "target": body[t0:t1],
            "noise2": body[t1:second],
        }
        for name, seg in segments.items():
            if _occurrences(seg, cfg.trigger):
                problems.append(f"{name} contains the trigger")
        if target is not None and tuple(body[t0:t1].tolist()) != tuple(int(s) for s in target):
            problems.append(f"target {tuple(target)} != tokens {body[t0:t1].tolist()} after the trigger")
    return not problems, problems


# =============================================================================
# TEXT EXPORT
# =============================================================================

def format_ih_line(tokens: Sequence[int], target: Sequence[int]) -> str:
    """'t1,t2,...;g1,...'"""
    return ",".join(str(int(t)) for t in tokens) + ";" + ",".join(str(int(g)) for g in target)


def parse_ih_line(line: str) -> Tuple[np.ndarray, Tuple[int, ...]]:
    try:
        left, right = line.strip().split(";")
        tokens = np.array([int(t) for t in left.split(",")], dtype=np.int64)
        target = tuple(int(g) for g in right.split(","))
    except ValueError as exc:
        raise ValueError(f"Malformed IH line {line!r}: {exc}") from None
    return tokens, target


# =============================================================================
# IH0
# =============================================================================

IH0_ALPHABET = (1, 2, 3)
IH0_TRIGGER = 1
IH0_INITIAL_EMBEDDING: Dict[int, Tuple[float, float]] = {
    1: (6.0, 6.0),
    2: (-10.0, -1.0),
    3: (-1.0, -10.0),
}
IH0_LEARNED_EMBEDDING: Dict[int, Tuple[float, float]] = {
    1: (5.394, 5.343),
    2: (-10.264, -1.575),
    3: (-1.539, -10.340),
}


def ih0_vocab() -> Vocab:
    return Vocab(symbols=IH0_ALPHABET, alphabet=IH0_ALPHABET)


def ih0_params() -> CoffeeParams:
    """D = 2, n = 1, lambda = 0, C = 1, w_D = 1: a gated integrator."""
    return CoffeeParams(lam=np.zeros((2, 1)), C=np.ones((2, 1)), w_D=np.ones((2, 1)))


def ih0_table(embedding: Union[Dict[int, Sequence[float]], np.ndarray]) -> np.ndarray:
    """3 x 2 table ordered by symbol 1, 2, 3."""
    if isinstance(embedding, dict):
        return np.array([embedding[s] for s in IH0_ALPHABET], dtype=float)
    table = np.asarray(embedding, dtype=float)
    if table.shape != (3, 2):
        raise ValueError(f"IH0 embedding must be 3 x 2, got {table.shape}")
    return table


def enumerate_ih0() -> List[Tuple[Tuple[int, ...], int]]:
    """
    All 8 IH0 sequences with their targets.

    trigger || target || noise || trigger and noise || trigger || target ||
    trigger, with target and noise in {2, 3}.
    """
    out = []
    for target in (2, 3):
        for noise in (2, 3):
            out.append(((IH0_TRIGGER, target, noise, IH0_TRIGGER), target))
    for target in (2, 3):
        for noise in (2, 3):
            out.append(((noise, IH0_TRIGGER, target, IH0_TRIGGER), target))
    return out


def ih0_trace(
    embedding: Union[Dict[int, Sequence[float]], np.ndarray],
    sequence: Sequence[int],
) -> np.ndarray:
    """
    States x(0..L-1) of the IH0 integrator, shape (L, 2).

    x(k) = x(k-1) + sigmoid(x(k-1)) * emb(token k), x(-1) = 0.
    """
    table = ih0_table(embedding)
    idx = ih0_vocab().encode(sequence)
    _, states = coffee_forward(ih0_params(), table[idx])
    return states[..., 0]


def ih0_dataset(vocab: Optional[Vocab] = None) -> Tuple[np.ndarray, PredictionTarget]:
    """All 8 sequences as row indices with the last position supervised."""
    vocab = vocab or ih0_vocab()
    seqs = enumerate_ih0()
    tokens = vocab.encode([s for s, _ in seqs])
    targets = vocab.encode([[t] for _, t in seqs])
    return tokens, PredictionTarget(positions=[3], targets=targets)
