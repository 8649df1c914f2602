"""Binary checkpoint: magic line, JSON header line, then raw float64 arrays."""

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .config import ModelConfig, validated
from .data_loading import Standardizer
from .errors import ConfigurationError, DataError
from .model import DptrnModel

logger = logging.getLogger(__name__)

MAGIC = b"DPTRN-CHECKPOINT 1\n"
_DTYPE = np.dtype("<f8")
_COMPARED_FIELDS = ("T", "M", "C", "relation_hidden", "classifier_hidden", "variant")


@dataclass
class Checkpoint:
    model: DptrnModel
    standardizer: Optional[Standardizer] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path, model: DptrnModel, standardizer: Optional[Standardizer] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write `model` (and the standardizer it was trained with) to `path`."""
    path = Path(path)
    arrays = list(model.state_dict().items())
    if standardizer is not None:
        arrays += [("standardizer.mean", standardizer.mean), ("standardizer.std", standardizer.std)]
    header = {
        "config": model.config.model_dump(mode="json"),
        "seed": model.seed,
        "arrays": [[name, list(array.shape)] for name, array in arrays],
        "standardizer": standardizer is not None,
        "metadata": metadata or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
        for _, array in arrays:
            fh.write(np.ascontiguousarray(array, dtype=_DTYPE).tobytes())
    logger.info("Checkpoint written to %s (%d arrays)", path, len(arrays))
    return path


def _mismatches(found: ModelConfig, expected: ModelConfig) -> List[str]:
    return [
        f"{name}: checkpoint has {getattr(found, name)!r}, requested {getattr(expected, name)!r}"
        for name in _COMPARED_FIELDS
        if getattr(found, name) != getattr(expected, name)
    ]


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a checkpoint; a header that disagrees with `expected` raises ConfigurationError."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"Checkpoint not found: {path}") from exc

    if not blob.startswith(MAGIC):
        raise DataError(f"{path} is not a checkpoint file")
    header_end = blob.find(b"\n", len(MAGIC))
    if header_end < 0:
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(blob[len(MAGIC):header_end].decode("utf-8"))
    except ValueError as exc:
        raise DataError(f"{path}: unreadable checkpoint header") from exc

    config = validated(ModelConfig, **header["config"])
    if expected is not None:
        problems = _mismatches(config, expected)
        if problems:
            raise ConfigurationError(f"Checkpoint {path} does not match the run config: " + "; ".join(problems))

    payload = memoryview(blob)[header_end + 1:]
    offset = 0
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(payload):
            raise DataError(f"{path}: checkpoint ends inside array '{name}'")
        arrays[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=_DTYPE).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise DataError(f"{path}: {len(payload) - offset} trailing bytes after the last array")

    standardizer = None
    if header.get("standardizer"):
        standardizer = Standardizer(mean=arrays.pop("standardizer.mean"), std=arrays.pop("standardizer.std"))

    model = DptrnModel(config, seed=header.get("seed", 0))
    model.load_state_dict(arrays)
    model.eval()
    logger.info("Loaded %s checkpoint from %s", config.variant, path)
    return Checkpoint(model=model, standardizer=standardizer, metadata=header.get("metadata", {}))
