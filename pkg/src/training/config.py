"""
Model and training configuration records.

Defaults are the induction-head settings: COFFEE with n = 8, D = 16, batches
of 512 freshly generated sequences, 10 000 steps per epoch, at most 100
epochs, early stop once eval accuracy reaches 0.995.
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional, Tuple

MODEL_KINDS = ("coffee", "s6", "linearized")
TASKS = ("ih", "mnist", "smnist")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "coffee"
    n: int = 8
    D: int = 16
    vocab_size: int = 8
    output_filter: bool = False
    squared_distance: bool = False
    use_ssm: bool = True  # False only for the sMNIST ablation

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"Unknown model kind '{self.kind}'. Expected one of {MODEL_KINDS}")
        if self.n < 1 or self.D < 1:
            raise ValueError(f"n and D must be positive, got n={self.n}, D={self.D}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.output_filter and self.kind != "coffee":
            raise ValueError(f"Output filtering is a COFFEE option, not available for '{self.kind}'")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        return cls(**_known(cls, data))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    steps_per_epoch: int = 10_000
    max_epochs: int = 100
    lr: float = 0.01
    lr_drop: Optional[Tuple[float, float]] = None  # (loss threshold, new lr)
    eval_size: int = 10_000
    seed: int = 0
    early_stop_accuracy: Optional[float] = 0.995
    threads: int = 1
    clip_norm: Optional[float] = None  # debug only
    train_limit: Optional[int] = None  # MNIST subset for desk-scale runs
    log_every: int = 100

    def __post_init__(self):
        for name in ("batch_size", "steps_per_epoch", "max_epochs", "eval_size", "threads", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.lr_drop is not None:
            threshold, new_lr = self.lr_drop
            if not new_lr > 0:
                raise ValueError(f"lr_drop learning rate must be > 0, got {new_lr}")
            object.__setattr__(self, "lr_drop", (float(threshold), float(new_lr)))
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.train_limit is not None and self.train_limit < 1:
            raise ValueError(f"train_limit must be positive, got {self.train_limit}")

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        if self.lr_drop is not None:
            out["lr_drop"] = list(self.lr_drop)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = _known(cls, data)
        if data.get("lr_drop") is not None:
            data["lr_drop"] = tuple(data["lr_drop"])
        return cls(**data)


def _known(cls, data: Dict[str, Any]) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"Unknown {cls.__name__} keys {unknown}; expected a subset of {sorted(names)}")
    return dict(data)
