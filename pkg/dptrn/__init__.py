"""Relation-network fault diagnosis for multivariate time-series windows."""

from .config import ModelConfig, RunConfig, SyntheticSpec, TrainConfig
from .data_loading import SampleSet, SequenceSample, Standardizer
from .model import DptrnModel, RelationReport

__all__ = [
    "DptrnModel",
    "ModelConfig",
    "RelationReport",
    "RunConfig",
    "SampleSet",
    "SequenceSample",
    "Standardizer",
    "SyntheticSpec",
    "TrainConfig",
]
