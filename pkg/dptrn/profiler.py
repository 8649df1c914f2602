"""Closed-form parameter and per-sample FLOP counts for a ModelConfig."""

from dataclasses import dataclass
import logging
from typing import Dict, Sequence

import pandas as pd

from .config import ModelConfig
from .shared_config import FLOP_CONVENTION

logger = logging.getLogger(__name__)

PARAM_PARTS = ("relation_mlp", "position_matrices", "classifier", "batchnorm")
FLOP_PARTS = PARAM_PARTS + ("dpe", "pooling")


def _linear_params(widths: Sequence[int]) -> int:
    return sum(fan_out * fan_in + fan_out for fan_in, fan_out in zip(widths[:-1], widths[1:]))


def _linear_macs(widths: Sequence[int]) -> int:
    return sum(fan_out * fan_in for fan_in, fan_out in zip(widths[:-1], widths[1:]))


def _relation_widths(config: ModelConfig):
    return (config.relation_input_dim, *config.relation_hidden, 1)


def _classifier_widths(config: ModelConfig):
    return (config.classifier_input_dim, *config.classifier_hidden, config.C)


def count_params(config: ModelConfig) -> Dict[str, int]:
    """Learnable parameters per part; batch-norm running statistics are not counted."""
    parts = dict.fromkeys(PARAM_PARTS, 0)
    parts["classifier"] = _linear_params(_classifier_widths(config))
    parts["batchnorm"] = 2 * sum(config.classifier_hidden)
    if config.uses_relation_unit:
        parts["relation_mlp"] = _linear_params(_relation_widths(config))
        parts["batchnorm"] += 2 * sum(config.relation_hidden)
    if config.uses_dpe:
        parts["position_matrices"] = 2 * config.M * config.M
    return parts


def count_flops(config: ModelConfig) -> Dict[str, int]:
    """Forward multiply-accumulates for one sample, split by part."""
    parts = dict.fromkeys(FLOP_PARTS, 0)
    n_hist = config.T - 1
    parts["classifier"] = _linear_macs(_classifier_widths(config))
    if config.uses_relation_unit:
        parts["relation_mlp"] = n_hist * _linear_macs(_relation_widths(config))
        parts["pooling"] = n_hist * config.M
    if config.uses_dpe:
        m2 = config.M * config.M
        # one query matvec and one inner product per node, one shared key matvec
        parts["dpe"] = n_hist * (m2 + config.M) + m2
    return parts


@dataclass
class ProfileReport:
    config: ModelConfig
    params_by_part: Dict[str, int]
    flops_by_part: Dict[str, int]

    @property
    def params_total(self) -> int:
        return sum(self.params_by_part.values())

    @property
    def flops_total(self) -> int:
        return sum(self.flops_by_part.values())


def profile(config: ModelConfig) -> ProfileReport:
    report = ProfileReport(config=config, params_by_part=count_params(config), flops_by_part=count_flops(config))
    logger.debug("Profiled %s: %d params, %d FLOPs", config.variant, report.params_total, report.flops_total)
    return report


def report_frame(report: ProfileReport) -> pd.DataFrame:
    rows = [
        {"part": part, "params": report.params_by_part.get(part, 0), "flops": report.flops_by_part.get(part, 0)}
        for part in FLOP_PARTS
    ]
    rows.append({"part": "total", "params": report.params_total, "flops": report.flops_total})
    return pd.DataFrame(rows, columns=["part", "params", "flops"])


def format_report(report: ProfileReport) -> str:
    cfg = report.config
    lines = [
        f"Model profile: variant={cfg.variant} T={cfg.T} M={cfg.M} C={cfg.C} "
        f"relation_hidden={list(cfg.relation_hidden)} classifier_hidden={list(cfg.classifier_hidden)}",
        f"{'part':<20}{'params':>14}{'flops':>16}",
    ]
    for _, row in report_frame(report).iterrows():
        if row["part"] == "total":
            lines.append("-" * 50)
        lines.append(f"{row['part']:<20}{int(row['params']):>14,}{int(row['flops']):>16,}")
    lines.append(f"Learnable parameters: {report.params_total:,}")
    lines.append(f"Forward FLOPs per sample: {report.flops_total:,}")
    lines.append(FLOP_CONVENTION)
    return "\n".join(lines)
