"""
JSON checkpoints.

Envelope (version 1):

    {"version": 1, "task": "ih|mnist|smnist", "model": "coffee|s6|linearized|none",
     "n": .., "D": .., "vocab": [...], "alphabet": [...], "frozen_row": null,
     "params": {name: {"shape": [...], "data": base64 little-endian float64}},
     "adam": {...} | null, "config": {...}, "metrics": [...], "seeds": {...},
     "checksum": sha256 of the canonical JSON of everything else}

Arrays are stored as raw 64-bit floats, so ``load(save(c))`` reproduces the
parameters bit for bit.
"""

import base64
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

try:
    from src.models.layers import params_from_arrays
    from src.models.mnist import Affine, MnistModel, SmnistModel
    from src.predictors.sequence_predictor import IHModel
    from src.predictors.symbol_predictor import EmbeddingTable, Vocab
    from src.training.optimizer import AdamState
except ImportError:
    from models.layers import params_from_arrays
    from models.mnist import Affine, MnistModel, SmnistModel
    from predictors.sequence_predictor import IHModel
    from predictors.symbol_predictor import EmbeddingTable, Vocab
    from training.optimizer import AdamState

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
REQUIRED_FIELDS = ("version", "task", "model", "n", "D", "params", "checksum")


class CheckpointError(ValueError):
    """Base class for unreadable checkpoints."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointSchemaError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    task: str
    model: str
    n: int
    D: int
    params: Dict[str, np.ndarray]
    vocab: Optional[List[int]] = None
    alphabet: Optional[List[int]] = None
    frozen_row: Optional[int] = None
    adam: Optional[Dict[str, Any]] = None
    config: Dict[str, Any] = field(default_factory=dict)
    metrics: List[Dict[str, Any]] = field(default_factory=list)
    seeds: Dict[str, int] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


# =============================================================================
# ARRAY CODEC
# =============================================================================

def encode_array(arr: np.ndarray) -> Dict[str, Any]:
    arr = np.asarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(entry: Dict[str, Any], name: str = "?") -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointSchemaError(f"Array '{name}' is malformed: {exc}") from exc
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(raw) != expected:
        raise CheckpointSchemaError(f"Array '{name}' has {len(raw)} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _adam_to_json(state: Optional[AdamState]) -> Optional[Dict[str, Any]]:
    if state is None:
        return None
    return {
        "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "t": state.t,
        "m": {k: encode_array(v) for k, v in state.m.items()},
        "v": {k: encode_array(v) for k, v in state.v.items()},
    }


def adam_from_json(data: Optional[Dict[str, Any]]) -> Optional[AdamState]:
    if data is None:
        return None
    return AdamState(
        lr=data["lr"], beta1=data["beta1"], beta2=data["beta2"], eps=data["eps"], t=data["t"],
        m={k: decode_array(v, k) for k, v in data["m"].items()},
        v={k: decode_array(v, k) for k, v in data["v"].items()},
    )


def _digest(payload: Dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# =============================================================================
# SAVE / LOAD
# =============================================================================

def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    payload = {
        "version": ckpt.version,
        "task": ckpt.task,
        "model": ckpt.model,
        "n": int(ckpt.n),
        "D": int(ckpt.D),
        "vocab": ckpt.vocab,
        "alphabet": ckpt.alphabet,
        "frozen_row": ckpt.frozen_row,
        "params": {k: encode_array(v) for k, v in ckpt.params.items()},
        "adam": ckpt.adam,
        "config": ckpt.config,
        "metrics": ckpt.metrics,
        "seeds": ckpt.seeds,
    }
    payload["checksum"] = _digest(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")
    tmp.replace(path)
    log.debug("Saved checkpoint %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Raises:
        FileNotFoundError: Missing file
        CheckpointSchemaError: Not JSON, truncated or missing fields
        CheckpointVersionError: Unknown format version
        CheckpointChecksumError: Contents do not match the stored digest
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointSchemaError(f"{path} is not a valid checkpoint ({exc})") from exc
    if not isinstance(payload, dict):
        raise CheckpointSchemaError(f"{path}: top level must be an object")
    if "version" in payload and payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {payload['version']!r} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    missing = [k for k in REQUIRED_FIELDS if k not in payload]
    if missing:
        raise CheckpointSchemaError(f"{path}: missing fields {missing}")

    stored = payload.pop("checksum")
    if _digest(payload) != stored:
        raise CheckpointChecksumError(f"{path}: checksum mismatch, file was modified or corrupted")

    params = payload["params"]
    if not isinstance(params, dict):
        raise CheckpointSchemaError(f"{path}: 'params' must be an object")
    return Checkpoint(
        task=payload["task"],
        model=payload["model"],
        n=payload["n"],
        D=payload["D"],
        params={k: decode_array(v, k) for k, v in params.items()},
        vocab=payload.get("vocab"),
        alphabet=payload.get("alphabet"),
        frozen_row=payload.get("frozen_row"),
        adam=payload.get("adam"),
        config=payload.get("config") or {},
        metrics=payload.get("metrics") or [],
        seeds=payload.get("seeds") or {},
        version=payload["version"],
    )


# =============================================================================
# MODEL <-> CHECKPOINT
# =============================================================================

def checkpoint_from_model(
    model,
    adam: Optional[AdamState] = None,
    config: Optional[Dict[str, Any]] = None,
    metrics: Optional[List[Dict[str, Any]]] = None,
    seeds: Optional[Dict[str, int]] = None,
) -> Checkpoint:
    params = {name: t.value.copy() for name, t in model.tensors().items()}
    common = dict(
        params=params,
        adam=_adam_to_json(adam),
        config=config or {},
        metrics=metrics or [],
        seeds=seeds or {},
    )
    if isinstance(model, IHModel):
        return Checkpoint(
            task="ih", model=model.kind, n=model.n, D=model.D,
            vocab=list(model.vocab.symbols), alphabet=list(model.vocab.alphabet),
            frozen_row=model.embedding.frozen_row, **common,
        )
    if isinstance(model, MnistModel):
        return Checkpoint(task="mnist", model=model.kind, n=model.n, D=model.layers[0].D, **common)
    if isinstance(model, SmnistModel):
        n = model.layer.n if model.layer is not None else 0
        return Checkpoint(task="smnist", model=model.kind, n=n, D=1, **common)
    raise TypeError(f"Cannot checkpoint a {type(model).__name__}")


def _group(params: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float64):
    """Rebuild the model a checkpoint was taken from."""
    params = {k: v.astype(dtype) for k, v in ckpt.params.items()}
    try:
        if ckpt.task == "ih":
            vocab = Vocab(symbols=tuple(ckpt.vocab), alphabet=tuple(ckpt.alphabet))
            squared = bool(ckpt.config.get("model", {}).get("squared_distance", False))
            return IHModel(
                vocab=vocab,
                embedding=EmbeddingTable(params["embedding"], frozen_row=ckpt.frozen_row),
                ssm=params_from_arrays(ckpt.model, _group(params, "ssm.")),
                squared_distance=squared,
            )
        if ckpt.task == "mnist":
            layers = [params_from_arrays(ckpt.model, _group(params, f"layer{i}.")) for i in range(4)]
            return MnistModel(
                layers=layers,
                head1=Affine(params["head1.W"], params["head1.b"]),
                head2=Affine(params["head2.W"], params["head2.b"]),
            )
        if ckpt.task == "smnist":
            layer = None
            if ckpt.model != "none":
                layer = params_from_arrays(ckpt.model, _group(params, "layer."))
            return SmnistModel(layer=layer, head=Affine(params["head.W"], params["head.b"]))
    except KeyError as exc:
        raise CheckpointSchemaError(f"Checkpoint is missing parameter {exc}") from exc
    raise CheckpointSchemaError(f"Unknown checkpoint task '{ckpt.task}'")
