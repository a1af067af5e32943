"""
Experiment presets and run configuration.

Every named experiment lives in ``data/presets.json``. Names are resolved
through ``canonicalize_preset``, which tolerates case, spaces and
underscores and maps the usual shorthands to their canonical names:

    >>> canonicalize_preset('Table7_Coffee')
    'table7-coffee'
    >>> canonicalize_preset('mnist-s6')
    'table7-s6-n2'

A ``RunConfig`` is built from three layers, later ones winning:
preset < JSON config file < explicit overrides (CLI flags).
"""

import json
import logging
import re
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import pandas as pd

try:
    from src.extractors.induction import IHConfig
    from src.extractors.mnist_extractor import AugmentConfig
    from src.training.config import TASKS, ModelConfig, TrainConfig
except ImportError:
    from extractors.induction import IHConfig
    from extractors.mnist_extractor import AugmentConfig
    from training.config import TASKS, ModelConfig, TrainConfig

log = logging.getLogger(__name__)

PRESETS_PATH = Path(__file__).resolve().parents[2] / "data" / "presets.json"


# =============================================================================
# PRESET NAME MAPPING
# =============================================================================

PRESET_ALIASES = {
    # induction head
    'table1': 'table1-coffee',
    'ih': 'table1-coffee',
    'ih-coffee': 'table1-coffee',
    'coffee-ih': 'table1-coffee',
    'ih-s6': 'table1-s6',
    's6-ih': 'table1-s6',

    # reduced dimensions
    'ih-small': 'table2',
    'ih-n1': 'table2',

    # trigger / target / noise variants
    'table3': 'table3-noise1',
    'ih-noise1': 'table3-noise1',
    'ih-noise2': 'table3-noise2',
    'ih-target2': 'table4',
    'ih-trigger2': 'table5',

    # sequence length
    'table6': 'table6-L32',
    'ih-l32': 'table6-L32',
    'ih-l64': 'table6-L64',
    'ih-l128': 'table6-L128',
    'ih-l256': 'table6-L256',
    'table6-l32': 'table6-L32',
    'table6-l64': 'table6-L64',
    'table6-l128': 'table6-L128',
    'table6-l256': 'table6-L256',

    # MNIST
    'table7': 'table7-coffee',
    'mnist': 'table7-coffee',
    'mnist-coffee': 'table7-coffee',
    'mnist-coffee-filter': 'table7-coffee-filter',
    'table7-filter': 'table7-coffee-filter',
    'mnist-s6': 'table7-s6-n2',
    'table7-s6': 'table7-s6-n2',
    'mnist-s6-n16': 'table7-s6-n16',

    # sequential MNIST
    'sequential-mnist': 'smnist',
    'smnist-coffee': 'smnist',
    'smnist-ablation': 'smnist-nossm',
    'smnist-no-ssm': 'smnist-nossm',
}


class UnknownPresetError(KeyError):
    def __init__(self, name: str, known: Iterable[str]):
        self.name = name
        self.known = sorted(known)
        super().__init__(f"Unknown preset '{name}'. Known presets: {', '.join(self.known)}")

    def __str__(self) -> str:
        return self.args[0]


def canonicalize_preset(name: str) -> str:
    """
    Map a preset name or alias to its canonical key.

    Unknown names come back normalized (lower case, dashes) so the caller
    can report them.
    """
    if name is None:
        return None
    key = re.sub(r"[\s_]+", "-", str(name).strip().lower())
    return PRESET_ALIASES.get(key, key)


@lru_cache(maxsize=4)
def _read_presets(path: str) -> Dict[str, Dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_presets(path: Union[str, Path] = PRESETS_PATH) -> Dict[str, Dict[str, Any]]:
    """All presets keyed by canonical name (lower case, except the sequence-length presets keep their 'L')."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Preset file not found: {path}")
    raw = _read_presets(str(path))
    return {name: json.loads(json.dumps(body)) for name, body in raw.items()}


def get_preset(name: str, presets: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
    presets = presets if presets is not None else load_presets()
    key = canonicalize_preset(name)
    by_lower = {k.lower(): k for k in presets}
    if key not in presets and key.lower() in by_lower:
        key = by_lower[key.lower()]
    if key not in presets:
        raise UnknownPresetError(name, presets)
    body = dict(presets[key])
    body["preset"] = key
    return body


def normalize_preset_column(df: pd.DataFrame, col: str = "preset") -> pd.DataFrame:
    """
    Canonicalize preset names in a DataFrame column.

    Unknown names are kept (normalized) and logged once.
    """
    if col not in df.columns:
        return df
    known = set(load_presets())
    raw = df[col].astype(str)
    canonical = raw.apply(canonicalize_preset)
    unknown = sorted(set(canonical[~canonical.isin(known)]))
    if unknown:
        log.warning("Unknown preset names in '%s': %s", col, unknown)
    df = df.copy()
    df[col] = canonical
    return df


# =============================================================================
# RUN CONFIG
# =============================================================================

@dataclass
class RunConfig:
    task: str = "ih"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ih: Optional[IHConfig] = None
    augment: Optional[AugmentConfig] = None
    deterministic: bool = False
    f32: bool = False
    preset: Optional[str] = None
    description: str = ""
    expect: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"Unknown task '{self.task}'. Expected one of {TASKS}")
        if self.task == "ih" and self.ih is None:
            self.ih = IHConfig()
        if self.task in ("mnist", "smnist") and self.augment is None:
            self.augment = AugmentConfig()

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "task": self.task,
            "preset": self.preset,
            "description": self.description,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "deterministic": self.deterministic,
            "f32": self.f32,
            "expect": dict(self.expect),
        }
        if self.ih is not None:
            out["ih"] = _jsonable(asdict(self.ih))
        if self.augment is not None:
            out["augment"] = asdict(self.augment)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        task = data.get("task", "ih")
        ih = data.get("ih")
        augment = data.get("augment")
        return cls(
            task=task,
            model=ModelConfig.from_dict(data.get("model", {})),
            train=TrainConfig.from_dict(data.get("train", {})),
            ih=_build(IHConfig, ih) if ih is not None else None,
            augment=_build(AugmentConfig, augment) if augment is not None else None,
            deterministic=bool(data.get("deterministic", False)),
            f32=bool(data.get("f32", False)),
            preset=data.get("preset"),
            description=data.get("description", ""),
            expect=dict(data.get("expect") or {}),
        )

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path


def _jsonable(d: Dict[str, Any]) -> Dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _build(cls, data: Dict[str, Any]):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"Unknown {cls.__name__} keys {unknown}; expected a subset of {sorted(names)}")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**data)


def deep_update(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            deep_update(base[key], value)
        else:
            base[key] = value
    return base


def build_run_config(
    preset: Optional[str] = None,
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    task: Optional[str] = None,
) -> RunConfig:
    """
    Merge preset, config file and overrides into a validated RunConfig.

    Raises:
        UnknownPresetError: Unknown preset name
        FileNotFoundError: Missing config file
        ValueError: Invalid or inconsistent settings
    """
    merged: Dict[str, Any] = {}
    if preset is not None:
        deep_update(merged, get_preset(preset))
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            deep_update(merged, json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path} is not valid JSON: {exc}") from exc
    if overrides:
        deep_update(merged, overrides)
    if task is not None:
        if merged.get("task", task) != task:
            raise ValueError(f"Preset/config is for task '{merged['task']}', not '{task}'")
        merged["task"] = task
    return RunConfig.from_dict(merged)
