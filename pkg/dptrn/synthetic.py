"""Synthetic fault task whose class evidence lives only on historical nodes."""

from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .config import SyntheticSpec
from .data_loading import RawSeries, SampleSet, write_csv
from .errors import DataError
from .seeding import derive_rng
from .shared_config import EVIDENCE_SUFFIX, SIGNATURE_RMS, SPLIT_NAMES

logger = logging.getLogger(__name__)


@dataclass
class SyntheticDataset:
    """Generated splits plus ground truth.

    `evidence[split]` is [N, E]: the historical rows that carry the class
    signature, -1 for class-0 samples which carry none.
    """

    spec: SyntheticSpec
    signatures: np.ndarray
    splits: Dict[str, SampleSet]
    evidence: Dict[str, np.ndarray]


def class_signatures(C: int, M: int, seed: int) -> np.ndarray:
    """Row c is the signature of class c; row 0 (normal operation) is zero.

    Fault signatures are orthonormal directions when C - 1 <= M, otherwise
    random unit directions, scaled so their RMS entry is SIGNATURE_RMS.
    """
    rng = derive_rng(seed, "signature")
    n_fault = C - 1
    signatures = np.zeros((C, M))
    if n_fault == 0:
        return signatures
    if n_fault <= M:
        q, _ = np.linalg.qr(rng.standard_normal((M, n_fault)))
        directions = q.T
    else:
        directions = rng.standard_normal((n_fault, M))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    signatures[1:] = directions * SIGNATURE_RMS * np.sqrt(M)
    return signatures


def _balanced_labels(n: int, C: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % C)


def _evidence_rows(n: int, T: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if count == 0:
        return np.zeros((n, 0), dtype=np.int64)
    ranks = np.argsort(rng.random((n, T - 1)), axis=1)
    return np.sort(ranks[:, :count], axis=1).astype(np.int64)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Draw train/valid/test windows; identical specs give identical arrays."""
    if spec.evidence_nodes_per_sample >= spec.T:
        raise DataError(f"evidence_nodes_per_sample={spec.evidence_nodes_per_sample} must be below T={spec.T}")
    T, M, C = spec.T, spec.M, spec.C
    signatures = class_signatures(C, M, spec.seed)
    rng = derive_rng(spec.seed, "data")

    splits: Dict[str, SampleSet] = {}
    evidence: Dict[str, np.ndarray] = {}
    next_origin = 0
    for name, n in zip(SPLIT_NAMES, (spec.n_train, spec.n_valid, spec.n_test)):
        labels = _balanced_labels(n, C, rng)
        nodes = spec.noise_std * rng.standard_normal((n, T, M))
        rows = _evidence_rows(n, T, spec.evidence_nodes_per_sample, rng)
        faulty = labels > 0
        for e in range(rows.shape[1]):
            nodes[np.flatnonzero(faulty), rows[faulty, e], :] += spec.signal_amplitude * signatures[labels[faulty]]
        rows[~faulty] = -1
        origins = next_origin + np.arange(n, dtype=np.int64) * T
        next_origin += n * T
        splits[name] = SampleSet(nodes=nodes, labels=labels, origins=origins)
        evidence[name] = rows
    logger.info(
        "Generated synthetic task T=%d M=%d C=%d: %d/%d/%d samples",
        T, M, C, spec.n_train, spec.n_valid, spec.n_test,
    )
    return SyntheticDataset(spec=spec, signatures=signatures, splits=splits, evidence=evidence)


def signature_match_oracle(samples: SampleSet, signatures: np.ndarray, amplitude: float) -> np.ndarray:
    """Predict by scanning every historical row for its best signature match.

    A fault class is predicted when some row projects onto that class's
    direction by more than half the planted strength; otherwise class 0.
    """
    if len(samples) == 0:
        return np.zeros(0, dtype=np.int64)
    faults = signatures[1:]
    if faults.shape[0] == 0:
        return np.zeros(len(samples), dtype=np.int64)
    norms = np.linalg.norm(faults, axis=1)
    directions = faults / norms[:, None]
    projections = np.einsum("nkm,cm->nkc", samples.nodes[:, :-1, :], directions)
    scores = projections.max(axis=1)
    best = np.argmax(scores, axis=1)
    threshold = amplitude * norms[best] / 2.0
    hit = scores[np.arange(len(samples)), best] > threshold
    return np.where(hit, best + 1, 0).astype(np.int64)


def to_raw_series(samples: SampleSet, feature_names: Optional[List[str]] = None) -> RawSeries:
    """Flatten windows into a node stream that re-windows into the same samples."""
    T, M = samples.T, samples.M
    return RawSeries(
        values=samples.nodes.reshape(-1, M),
        labels=np.repeat(samples.labels, T),
        feature_names=feature_names or [f"x{i}" for i in range(M)],
        node_ids=samples.node_indices().ravel(),
    )


def evidence_frame(rows: np.ndarray) -> pd.DataFrame:
    sample_ids, slots = np.nonzero(rows >= 0)
    return pd.DataFrame({"sample_id": sample_ids, "node_index": rows[sample_ids, slots]})


def write_evidence_csv(rows: np.ndarray, path) -> Path:
    path = Path(path)
    evidence_frame(rows).to_csv(path, index=False, lineterminator="\n")
    return path


def load_evidence_csv(path) -> Dict[int, List[int]]:
    """Map sample_id to its ground-truth evidence node indices."""
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"Evidence file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"Evidence file is empty: {path}") from exc
    missing = {"sample_id", "node_index"} - set(frame.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    evidence: Dict[int, List[int]] = {}
    for sample_id, node_index in zip(frame["sample_id"].astype(int), frame["node_index"].astype(int)):
        evidence.setdefault(int(sample_id), []).append(int(node_index))
    return evidence


def write_dataset(dataset: SyntheticDataset, out_dir) -> List[Path]:
    """Write one CSV and one evidence sidecar per split into `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in SPLIT_NAMES:
        written.append(write_csv(to_raw_series(dataset.splits[name]), out_dir / f"{name}.csv"))
        written.append(write_evidence_csv(dataset.evidence[name], out_dir / f"{name}{EVIDENCE_SUFFIX}"))
    return written
