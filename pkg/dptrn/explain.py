"""Export relation weights of a trained model: CSV, heatmaps, summary and PDF."""

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .checkpoint import Checkpoint
from .data_loading import SampleSet
from .errors import ConfigurationError, DimensionError
from .graph_plotter import plot_relation_panel
from .heatmap import HeatmapGrid, render_rgb, write_grid_csv, write_ppm
from .model import RelationBatch
from .pdf_helpers import write_explain_report
from .shared_config import (
    EXPLAIN_REPORT_FILE,
    EXPLAIN_SUMMARY_FILE,
    HEATMAP_KINDS,
    RELATIONS_CSV_FILE,
)

logger = logging.getLogger(__name__)


@dataclass
class ExplainResult:
    relations: RelationBatch
    summary: Dict[str, Any]
    written: List[Path] = field(default_factory=list)


def relations_frame(batch: RelationBatch) -> pd.DataFrame:
    """Long table sample_id,node_index,rw_pre,dpe,rw."""
    n, n_hist = batch.rw_pre.shape
    return pd.DataFrame({
        "sample_id": np.repeat(np.arange(n), n_hist),
        "node_index": np.tile(np.arange(n_hist), n),
        "rw_pre": batch.rw_pre.ravel(),
        "dpe": np.tile(batch.dpe, n),
        "rw": batch.rw.ravel(),
    })


def increasing_fraction(values: np.ndarray) -> float:
    """Share of adjacent pairs that increase toward the current node."""
    if values.size < 2:
        return float("nan")
    return float(np.mean(np.diff(values) > 0.0))


def evidence_contrast(rw_pre: np.ndarray, evidence: Dict[int, List[int]]) -> Dict[str, float]:
    """Mean rw_pre at ground-truth evidence nodes against all other historical nodes of the same samples."""
    n, n_hist = rw_pre.shape
    mask = np.zeros((n, n_hist), dtype=bool)
    for sample_id, nodes in evidence.items():
        if 0 <= sample_id < n:
            mask[sample_id, [k for k in nodes if 0 <= k < n_hist]] = True
    rows = mask.any(axis=1)
    if not rows.any():
        return {"evidence_samples": 0, "evidence_rw_pre_mean": float("nan"), "other_rw_pre_mean": float("nan")}
    on = rw_pre[mask]
    off = rw_pre[rows][~mask[rows]]
    return {
        "evidence_samples": int(rows.sum()),
        "evidence_rw_pre_mean": float(on.mean()),
        "other_rw_pre_mean": float(off.mean()) if off.size else float("nan"),
    }


def _write_heatmaps(batch: RelationBatch, sample_id: int, out_dir: Path) -> List[Path]:
    written = []
    report = batch.report(sample_id)
    for kind in HEATMAP_KINDS:
        heatmap = HeatmapGrid.layout(getattr(report, kind))
        written.append(write_ppm(render_rgb(heatmap), out_dir / f"{sample_id}_{kind}.ppm"))
        written.append(write_grid_csv(heatmap, out_dir / f"{sample_id}_{kind}_grid.csv"))
    return written


def _stats_table(summary: Dict[str, Any]) -> pd.DataFrame:
    rows = []
    for key in sorted(summary):
        value = summary[key]
        if isinstance(value, float):
            value = "n/a" if math.isnan(value) else f"{value:.4f}"
        rows.append({"statistic": key, "value": value})
    return pd.DataFrame(rows, columns=["statistic", "value"])


def explain(
    checkpoint: Checkpoint,
    samples: SampleSet,
    out_dir,
    evidence: Optional[Dict[int, List[int]]] = None,
    n_images: int = 4,
    feature_names: Optional[List[str]] = None,
) -> ExplainResult:
    """Write relation weights of every sample plus images for the first `n_images`.

    Samples are expected in raw units; the checkpoint's standardizer is applied.
    """
    model = checkpoint.model
    config = model.config
    if not config.uses_relation_unit:
        raise ConfigurationError(f"Variant {config.variant} has no relation unit to explain")
    if samples.nodes.shape[1:] != (config.T, config.M):
        raise ConfigurationError(
            f"Samples of shape {samples.nodes.shape[1:]} do not match checkpoint T={config.T}, M={config.M}"
        )
    if len(samples) == 0:
        raise DimensionError("explained samples", (1, config.T, config.M), samples.nodes.shape)
    if checkpoint.standardizer is not None:
        samples = checkpoint.standardizer.apply(samples)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    batch = model.relation_batch(samples.nodes)
    written: List[Path] = []

    path = out_dir / RELATIONS_CSV_FILE
    relations_frame(batch).to_csv(path, index=False, lineterminator="\n")
    written.append(path)

    n_images = min(n_images, len(samples))
    for sample_id in range(n_images):
        written += _write_heatmaps(batch, sample_id, out_dir)

    summary: Dict[str, Any] = {
        "variant": config.variant,
        "n_samples": len(samples),
        "dpe_increasing_fraction": increasing_fraction(batch.dpe),
        "rw_pre_mean": float(batch.rw_pre.mean()),
        "rw_pre_sum_mean": float(batch.rw_pre.sum(axis=1).mean()),
    }
    if evidence is not None:
        summary.update(evidence_contrast(batch.rw_pre, evidence))
        logger.info(
            "Mean rw_pre at evidence nodes %.4f vs other nodes %.4f",
            summary["evidence_rw_pre_mean"], summary["other_rw_pre_mean"],
        )

    path = out_dir / EXPLAIN_SUMMARY_FILE
    # NaN is not valid JSON; absent statistics are written as null
    clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in summary.items()}
    path.write_text(json.dumps(clean, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    written.append(path)

    if n_images:
        first_evidence = sorted((evidence or {}).get(0, []))
        figure = plot_relation_panel(batch.report(0), samples.nodes[0], feature_names, first_evidence)
        path = write_explain_report(
            out_dir / EXPLAIN_REPORT_FILE,
            figure,
            _stats_table(summary),
            title=f"Relation weights ({config.variant}, T={config.T}, M={config.M}, C={config.C})",
            notes=["Sample 0: heatmaps run left to right, top to bottom over historical nodes 0..T-2."],
        )
        written.append(path)

    for item in written:
        logger.debug("Wrote %s", item)
    logger.info("Explained %d samples into %s", len(samples), out_dir)
    return ExplainResult(relations=batch, summary=summary, written=written)
