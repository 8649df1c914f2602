"""Helpers for loading CSV series and turning them into fixed-length windows."""

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from .errors import DataError, DimensionError
from .shared_config import LABEL_COLUMN, SPLIT_COLUMN, SPLIT_NAMES, SPLIT_RATIOS

logger = logging.getLogger(__name__)


# ==========================================
# Containers
# ==========================================


@dataclass
class RawSeries:
    """Node-by-node measurements with one class label per node.

    `node_ids` are the raw row indices the nodes came from; `splits` holds
    the per-node split name when the source file carried a split column.
    """

    values: np.ndarray
    labels: np.ndarray
    feature_names: Optional[List[str]] = None
    node_ids: Optional[np.ndarray] = None
    splits: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2:
            raise DimensionError("series values", (len(self.labels), -1), self.values.shape)
        if self.labels.shape != (self.values.shape[0],):
            raise DimensionError("series labels", (self.values.shape[0],), self.labels.shape)
        if self.node_ids is None:
            self.node_ids = np.arange(self.values.shape[0])
        if self.feature_names is not None and len(self.feature_names) != self.values.shape[1]:
            raise DimensionError("feature names", (self.values.shape[1],), (len(self.feature_names),))

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def select(self, mask: np.ndarray) -> "RawSeries":
        return RawSeries(
            values=self.values[mask],
            labels=self.labels[mask],
            feature_names=self.feature_names,
            node_ids=self.node_ids[mask],
            splits=None if self.splits is None else self.splits[mask],
        )


@dataclass(frozen=True)
class SequenceSample:
    """One T x M window; row T-1 is the current node and defines the label."""

    nodes: np.ndarray
    label: int
    origin: int = 0


@dataclass
class SampleSet:
    """A batch of windows stored as one [N, T, M] array."""

    nodes: np.ndarray
    labels: np.ndarray
    origins: np.ndarray = field(default=None)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.nodes.ndim != 3:
            raise DimensionError("sample nodes", (len(self.labels), -1, -1), self.nodes.shape)
        if self.labels.shape != (self.nodes.shape[0],):
            raise DimensionError("sample labels", (self.nodes.shape[0],), self.labels.shape)
        if self.origins is None:
            self.origins = np.arange(self.nodes.shape[0]) * self.nodes.shape[1]
        self.origins = np.asarray(self.origins, dtype=np.int64)

    @classmethod
    def from_samples(cls, samples: Sequence[SequenceSample], T: int, M: int) -> "SampleSet":
        if not samples:
            return cls.empty(T, M)
        return cls(
            nodes=stack_samples(samples),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            origins=np.array([s.origin for s in samples], dtype=np.int64),
        )

    @classmethod
    def empty(cls, T: int, M: int) -> "SampleSet":
        return cls(nodes=np.zeros((0, T, M)), labels=np.zeros(0, dtype=np.int64), origins=np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, sets: Sequence["SampleSet"]) -> "SampleSet":
        return cls(
            nodes=np.concatenate([s.nodes for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            origins=np.concatenate([s.origins for s in sets]),
        )

    @property
    def T(self) -> int:
        return self.nodes.shape[1]

    @property
    def M(self) -> int:
        return self.nodes.shape[2]

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def __iter__(self) -> Iterator[SequenceSample]:
        for i in range(len(self)):
            yield SequenceSample(nodes=self.nodes[i], label=int(self.labels[i]), origin=int(self.origins[i]))

    def subset(self, indices) -> "SampleSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(nodes=self.nodes[indices], labels=self.labels[indices], origins=self.origins[indices])

    def node_indices(self) -> np.ndarray:
        """Raw node indices covered by every window, shape [N, T]."""
        return self.origins[:, None] + np.arange(self.T)[None, :]


def stack_samples(samples: Sequence[SequenceSample]) -> np.ndarray:
    shapes = {s.nodes.shape for s in samples}
    if len(shapes) != 1:
        raise DimensionError("stacked samples", next(iter(shapes)), sorted(shapes)[-1])
    return np.stack([s.nodes for s in samples]).astype(np.float64)


# ==========================================
# CSV
# ==========================================


@dataclass(frozen=True)
class CsvSchema:
    """How to read a CSV: label column name (or position without a header)."""

    label_col: Union[str, int] = LABEL_COLUMN
    has_header: bool = True
    split_col: Optional[str] = SPLIT_COLUMN


def _line_of(row: int, schema: CsvSchema) -> int:
    return row + (2 if schema.has_header else 1)


def _numeric_column(frame: pd.DataFrame, column, path: Path, schema: CsvSchema) -> np.ndarray:
    series = frame[column]
    if not pd.api.types.is_numeric_dtype(series):
        series = pd.to_numeric(series, errors="coerce")
    values = series.to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise DataError(
            f"{path}: line {_line_of(row, schema)}: non-numeric or non-finite value "
            f"{frame[column].iloc[row]!r} in column '{column}'"
        )
    return values


def _resolve_label_column(frame: pd.DataFrame, schema: CsvSchema, path: Path):
    if schema.has_header:
        if str(schema.label_col) not in frame.columns:
            raise DataError(f"{path}: label column '{schema.label_col}' not found in header {list(frame.columns)}")
        return str(schema.label_col)
    try:
        position = int(schema.label_col)
    except ValueError as exc:
        raise DataError(f"{path}: without a header the label column must be a position, got {schema.label_col!r}") from exc
    try:
        return frame.columns[position]
    except IndexError as exc:
        raise DataError(f"{path}: label column {position} out of range for {frame.shape[1]} columns") from exc


def load_csv(path, schema: CsvSchema = CsvSchema()) -> RawSeries:
    """Load a node-per-row CSV of numeric features plus an integer label column."""
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            header=0 if schema.has_header else None,
            float_precision="round_trip",
            skipinitialspace=True,
        )
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"File not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"File is empty: {path}") from exc
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc

    if frame.empty:
        raise DataError(f"{path}: no data rows")

    label_col = _resolve_label_column(frame, schema, path)
    split_col = schema.split_col if schema.has_header and schema.split_col in frame.columns else None

    label_values = _numeric_column(frame, label_col, path, schema)
    non_integer = np.flatnonzero(label_values != np.round(label_values))
    if non_integer.size:
        row = int(non_integer[0])
        raise DataError(f"{path}: line {_line_of(row, schema)}: label {label_values[row]!r} is not an integer")
    if np.any(label_values < 0):
        row = int(np.flatnonzero(label_values < 0)[0])
        raise DataError(f"{path}: line {_line_of(row, schema)}: negative label {label_values[row]!r}")

    feature_cols = [c for c in frame.columns if c not in (label_col, split_col)]
    if not feature_cols:
        raise DataError(f"{path}: no feature columns")
    values = np.column_stack([_numeric_column(frame, c, path, schema) for c in feature_cols])

    splits = None
    if split_col is not None:
        splits = frame[split_col].astype(str).str.strip().to_numpy()
        unknown = sorted(set(splits) - set(SPLIT_NAMES))
        if unknown:
            row = int(np.flatnonzero(~np.isin(splits, SPLIT_NAMES))[0])
            raise DataError(f"{path}: line {_line_of(row, schema)}: unknown split {unknown[0]!r}")

    series = RawSeries(
        values=values,
        labels=label_values.astype(np.int64),
        feature_names=[str(c) for c in feature_cols] if schema.has_header else None,
        splits=splits,
    )
    logger.info("Loaded %s: %d rows, %d features", path, series.n_nodes, series.n_features)
    return series


def write_csv(series: RawSeries, path, label_col: str = LABEL_COLUMN) -> Path:
    """Write `series` in the format `load_csv` reads back exactly."""
    path = Path(path)
    names = series.feature_names or [f"x{i}" for i in range(series.n_features)]
    frame = pd.DataFrame(series.values, columns=names)
    frame[label_col] = series.labels
    if series.splits is not None:
        frame[SPLIT_COLUMN] = series.splits
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, series.n_nodes)
    return path


# ==========================================
# Windowing and splits
# ==========================================


def window_non_crossover(series: RawSeries, T: int) -> List[SequenceSample]:
    """Cut `series` into disjoint consecutive windows of T nodes; the remainder is dropped."""
    if series.n_nodes < T:
        raise DataError(f"Series has {series.n_nodes} nodes, fewer than the window length T={T}")
    samples = []
    for start in range(0, series.n_nodes - T + 1, T):
        stop = start + T
        samples.append(
            SequenceSample(
                nodes=series.values[start:stop].copy(),
                label=int(series.labels[stop - 1]),
                origin=int(series.node_ids[start]),
            )
        )
    dropped = series.n_nodes - len(samples) * T
    if dropped:
        logger.debug("Dropped %d trailing nodes after windowing", dropped)
    return samples


def split_windows(samples: SampleSet, ratios: Tuple[float, float, float] = SPLIT_RATIOS) -> Dict[str, SampleSet]:
    """Split whole windows per class: the first share of each class trains, then valid, then test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not np.isclose(sum(ratios), 1.0):
        raise DataError(f"Split ratios must be three non-negative shares summing to 1, got {ratios}")
    parts: Dict[str, List[np.ndarray]] = {name: [] for name in SPLIT_NAMES}
    for label in np.unique(samples.labels):
        members = np.flatnonzero(samples.labels == label)
        n_train = int(len(members) * ratios[0])
        n_valid = int(len(members) * ratios[1])
        parts["train"].append(members[:n_train])
        parts["valid"].append(members[n_train:n_train + n_valid])
        parts["test"].append(members[n_train + n_valid:])
    result = {}
    for name in SPLIT_NAMES:
        indices = np.sort(np.concatenate(parts[name])) if parts[name] else np.zeros(0, dtype=np.int64)
        result[name] = samples.subset(indices)
    return result


def windows_by_split_column(series: RawSeries, T: int) -> Dict[str, SampleSet]:
    """Window each split of a series that carries a split column separately."""
    result = {}
    for name in SPLIT_NAMES:
        part = series.select(series.splits == name)
        if part.n_nodes < T:
            result[name] = SampleSet.empty(T, series.n_features)
            continue
        result[name] = SampleSet.from_samples(window_non_crossover(part, T), T, series.n_features)
    return result


def load_splits(T: int, schema: CsvSchema = CsvSchema(), data_dir=None, data_path=None) -> Dict[str, SampleSet]:
    """Read train/valid/test windows from a split directory or a single CSV."""
    if data_dir is not None:
        data_dir = Path(data_dir)
        result = {}
        for name in SPLIT_NAMES:
            path = data_dir / f"{name}.csv"
            if name == "valid" and not path.exists():
                logger.warning("No %s; continuing without a validation split", path)
                result[name] = None
                continue
            series = load_csv(path, schema)
            result[name] = SampleSet.from_samples(window_non_crossover(series, T), T, series.n_features)
        if result["valid"] is None:
            result["valid"] = SampleSet.empty(T, result["train"].M)
        return result
    if data_path is not None:
        series = load_csv(data_path, schema)
        if series.splits is not None:
            return windows_by_split_column(series, T)
        windows = SampleSet.from_samples(window_non_crossover(series, T), T, series.n_features)
        return split_windows(windows)
    raise DataError("No data given: pass a data directory or a CSV file")


# ==========================================
# Standardization
# ==========================================


@dataclass
class Standardizer:
    """Per-feature z-score fitted on training nodes.

    Wraps a StandardScaler over node rows; `mean` and `std` are its
    `mean_` and `scale_`, kept as plain arrays for checkpoints.
    """

    mean: np.ndarray
    std: np.ndarray
    scaler: Optional[StandardScaler] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.scaler is None:
            # restore a fitted scaler from stored statistics
            self.scaler = StandardScaler()
            self.scaler.mean_ = self.mean
            self.scaler.scale_ = self.std
            self.scaler.var_ = self.std ** 2
            self.scaler.n_features_in_ = self.mean.shape[0]
            self.scaler.n_samples_seen_ = 0

    @classmethod
    def fit(cls, samples: SampleSet) -> "Standardizer":
        if len(samples) == 0:
            raise DataError("Cannot fit a standardizer on an empty training set")
        rows = samples.nodes.reshape(-1, samples.M)
        scaler = StandardScaler().fit(rows)
        constant = np.flatnonzero(np.ptp(rows, axis=0) == 0.0)
        if constant.size:
            logger.warning("Features %s are constant; their std is set to 1", constant.tolist())
        return cls(mean=scaler.mean_, std=scaler.scale_, scaler=scaler)

    def _transformed(self, samples: SampleSet, method) -> SampleSet:
        if samples.M != self.mean.shape[0]:
            raise DimensionError("standardized samples", (len(samples), samples.T, self.mean.shape[0]), samples.nodes.shape)
        nodes = samples.nodes.copy()
        if len(samples):
            nodes = method(samples.nodes.reshape(-1, samples.M)).reshape(samples.nodes.shape)
        return SampleSet(nodes=nodes, labels=samples.labels.copy(), origins=samples.origins.copy())

    def apply(self, samples: SampleSet) -> SampleSet:
        return self._transformed(samples, self.scaler.transform)

    def inverse(self, samples: SampleSet) -> SampleSet:
        return self._transformed(samples, self.scaler.inverse_transform)
