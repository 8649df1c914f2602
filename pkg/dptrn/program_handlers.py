"""Subcommand handlers: data generation, training, evaluation, profiling, explanation, ablation."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_run_config
from .data_loading import CsvSchema, SampleSet, Standardizer, load_splits
from .errors import ConfigurationError, DataError
from .explain import explain
from .metrics import (
    SUMMARY_METRICS,
    aggregate_seeds,
    detection_metrics,
    evaluate,
    write_metrics_csv,
    write_metrics_json,
)
from .model import DptrnModel
from .profiler import format_report, profile, report_frame
from .shared_config import (
    ABLATION_RUNS_FILE,
    ABLATION_SUMMARY_FILE,
    CHECKPOINT_FILE,
    EVIDENCE_SUFFIX,
    METRICS_CSV_FILE,
    METRICS_JSON_FILE,
    PROFILE_CSV_FILE,
    RUN_CONFIG_FILE,
    TRAIN_LOG_FILE,
    VARIANTS,
)
from .synthetic import generate_synthetic, load_evidence_csv, signature_match_oracle, write_dataset
from .training import TrainLog, train

logger = logging.getLogger(__name__)


@dataclass
class PreparedData:
    splits: Dict[str, SampleSet]
    # evidence sidecars keyed by split, when the data is synthetic
    evidence: Dict[str, Dict[int, List[int]]]


def prepare_data(config: RunConfig) -> PreparedData:
    """Load CSV splits, or generate the synthetic task when no data path is configured."""
    if config.data_dir is None and config.data_path is None:
        logger.info("No data path given; generating the synthetic task from the run config")
        dataset = generate_synthetic(config.synthetic_settings())
        evidence = {
            name: {int(i): [int(k) for k in row if k >= 0] for i, row in enumerate(rows) if (row >= 0).any()}
            for name, rows in dataset.evidence.items()
        }
        return PreparedData(splits=dataset.splits, evidence=evidence)

    schema = CsvSchema(label_col=config.label_col, has_header=config.has_header)
    splits = load_splits(config.T, schema, data_dir=config.data_dir, data_path=config.data_path)
    if splits["train"].M != config.M:
        raise ConfigurationError(f"Data has {splits['train'].M} features but the run config sets M={config.M}")
    evidence = {}
    if config.data_dir is not None:
        for name in splits:
            path = Path(config.data_dir) / f"{name}{EVIDENCE_SUFFIX}"
            if path.exists():
                evidence[name] = load_evidence_csv(path)
    return PreparedData(splits=splits, evidence=evidence)


def fit_model(config: RunConfig, splits: Dict[str, SampleSet], variant: Optional[str] = None,
              seed: Optional[int] = None) -> Tuple[DptrnModel, Standardizer, TrainLog]:
    """Standardize with training statistics and train one model."""
    seed = config.seed if seed is None else seed
    standardizer = Standardizer.fit(splits["train"])
    scaled = {name: standardizer.apply(samples) for name, samples in splits.items()}
    model = DptrnModel(config.model_settings(variant), seed=seed)
    _, log = train(model, scaled, config.train_settings(seed))
    return model, standardizer, log


def score(model: DptrnModel, standardizer: Optional[Standardizer], samples: SampleSet):
    if len(samples) == 0:
        raise DataError("Test split is empty")
    if standardizer is not None:
        samples = standardizer.apply(samples)
    logits = model.logits(samples.nodes)
    if int(samples.labels.max()) >= model.config.C:
        raise DataError(f"Test label {int(samples.labels.max())} out of range for C={model.config.C}")
    return evaluate(logits, samples.labels, model.config.C), detection_metrics(logits, samples.labels)


def run_ablation_job(job: Tuple[RunConfig, str, int, Dict[str, SampleSet]]) -> Dict[str, Any]:
    """Train and test one (variant, seed) pair; module level so worker processes can pickle it."""
    config, variant, seed, splits = job
    model, standardizer, log = fit_model(config, splits, variant=variant, seed=seed)
    metrics, _ = score(model, standardizer, splits["test"])
    row: Dict[str, Any] = {"variant": variant, "seed": seed}
    row.update(metrics.to_flat_dict())
    row["selected_epoch"] = log.selected_epoch
    logger.info("Ablation %s seed %d: accuracy %.4f", variant, seed, metrics.accuracy)
    return row


class BaseCommandHandler:
    def __init__(self, **kwargs):
        self.config: RunConfig = kwargs.get("config")
        self.out_dir = Path(kwargs.get("out_dir") or self.config.out_dir)

    def write_run_config(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / RUN_CONFIG_FILE
        path.write_text(format_run_config(self.config), encoding="utf-8")
        return path

    def checkpoint_path(self) -> Path:
        return Path(self.config.checkpoint) if self.config.checkpoint else self.out_dir / CHECKPOINT_FILE

    def run(self) -> List[Path]:
        """Run the subcommand and return the files written."""
        raise NotImplementedError


class GenerateDataHandler(BaseCommandHandler):
    """Write the synthetic task as split CSVs plus evidence sidecars."""

    def run(self) -> List[Path]:
        spec = self.config.synthetic_settings()
        dataset = generate_synthetic(spec)
        test = dataset.splits["test"]
        if len(test):
            oracle = signature_match_oracle(test, dataset.signatures, spec.signal_amplitude)
            accuracy = float(np.mean(oracle == test.labels))
            logger.info("Signature-matching oracle test accuracy: %.4f", accuracy)
            print(f"Oracle test accuracy: {accuracy:.4f}")
        written = [self.write_run_config()] + write_dataset(dataset, self.out_dir)
        print(f"Wrote {len(written)} files to {self.out_dir}")
        return written


class TrainHandler(BaseCommandHandler):
    """Train one model and write its checkpoint and train log."""

    def run(self) -> List[Path]:
        data = prepare_data(self.config)
        model, standardizer, log = fit_model(self.config, data.splits)
        written = [self.write_run_config()]
        written.append(save_checkpoint(
            self.checkpoint_path(), model, standardizer,
            metadata={"selected_epoch": log.selected_epoch, "seed": self.config.seed},
        ))
        written.append(log.write_csv(self.out_dir / TRAIN_LOG_FILE, record_timing=self.config.record_timing))
        print(f"Selected epoch {log.selected_epoch}; checkpoint {written[1]}")
        return written


class EvaluateHandler(BaseCommandHandler):
    """Score a checkpoint on the test split."""

    def run(self) -> List[Path]:
        checkpoint = load_checkpoint(self.checkpoint_path(), expected=self.config.model_settings())
        data = prepare_data(self.config)
        metrics, detection = score(checkpoint.model, checkpoint.standardizer, data.splits["test"])

        payload = {"variant": checkpoint.model.config.variant, "seed": self.config.seed}
        payload.update(metrics.to_json_dict())
        payload["detection"] = detection
        row = {"variant": payload["variant"], "seed": self.config.seed}
        row.update(metrics.to_flat_dict())
        row.update(detection)

        written = [self.write_run_config()]
        written.append(write_metrics_json(payload, self.out_dir / METRICS_JSON_FILE))
        written.append(write_metrics_csv([row], self.out_dir / METRICS_CSV_FILE))
        print(
            f"accuracy={metrics.accuracy:.4f} macro_recall={metrics.macro_recall:.4f} "
            f"macro_f1={metrics.macro_f1:.4f}"
        )
        print(
            f"fault detection: accuracy={detection['detection_accuracy']:.4f} "
            f"recall={detection['detection_recall']:.4f} f1={detection['detection_f1']:.4f} "
            f"false_alarm_rate={detection['false_alarm_rate']:.4f}"
        )
        if metrics.absent_classes:
            print(f"classes absent from the test labels: {metrics.absent_classes}")
        return written


class ProfileHandler(BaseCommandHandler):
    """Print parameter and FLOP counts; needs no data."""

    def run(self) -> List[Path]:
        report = profile(self.config.model_settings())
        print(format_report(report))
        written = [self.write_run_config()]
        path = self.out_dir / PROFILE_CSV_FILE
        report_frame(report).to_csv(path, index=False, lineterminator="\n")
        written.append(path)
        return written


class ExplainHandler(BaseCommandHandler):
    """Export relation weights of a checkpoint on the test split."""

    def run(self) -> List[Path]:
        checkpoint = load_checkpoint(self.checkpoint_path(), expected=self.config.model_settings())
        data = prepare_data(self.config)
        if self.config.evidence_path:
            evidence = load_evidence_csv(self.config.evidence_path)
        else:
            evidence = data.evidence.get("test")
        written = [self.write_run_config()]
        result = explain(
            checkpoint,
            data.splits["test"],
            self.out_dir,
            evidence=evidence,
            n_images=self.config.explain_samples,
        )
        written += result.written
        if evidence is not None:
            print(
                f"mean rw_pre at evidence nodes {result.summary['evidence_rw_pre_mean']:.4f}, "
                f"elsewhere {result.summary['other_rw_pre_mean']:.4f}"
            )
        print(f"Explained {result.summary['n_samples']} samples into {self.out_dir}")
        return written


class AblationHandler(BaseCommandHandler):
    """Train every variant over every seed and compare test metrics."""

    def run(self) -> List[Path]:
        data = prepare_data(self.config)
        jobs = [(self.config, variant, seed, data.splits) for variant in VARIANTS for seed in self.config.seeds]

        # serial path for one worker or one job
        if self.config.jobs == 1 or len(jobs) == 1:
            rows = [run_ablation_job(job) for job in jobs]
        else:
            with ProcessPoolExecutor(max_workers=self.config.jobs) as executor:
                rows = list(executor.map(run_ablation_job, jobs))

        runs = pd.DataFrame(rows)
        summary = self.summarize(runs)
        written = [self.write_run_config()]
        path = self.out_dir / ABLATION_RUNS_FILE
        runs.to_csv(path, index=False, lineterminator="\n")
        written.append(path)
        path = self.out_dir / ABLATION_SUMMARY_FILE
        summary.to_csv(path, index=False, lineterminator="\n")
        written.append(path)

        print(summary.to_string(index=False))
        self.report_ordering(summary)
        return written

    @staticmethod
    def summarize(runs: pd.DataFrame) -> pd.DataFrame:
        frames = []
        for variant in VARIANTS:
            subset = runs[runs["variant"] == variant]
            if subset.empty:
                continue
            stats = aggregate_seeds(subset[list(SUMMARY_METRICS)].to_dict("records"))
            stats.insert(0, "metric", stats.index)
            stats.insert(0, "variant", variant)
            frames.append(stats.reset_index(drop=True))
        return pd.concat(frames, ignore_index=True)

    @staticmethod
    def report_ordering(summary: pd.DataFrame) -> Dict[str, bool]:
        """Whether the full model's mean accuracy is within half a point of each ablation or better."""
        means = summary[summary["metric"] == "accuracy"].set_index("variant")["mean"]
        ordering = {}
        for other in ("ablation_a", "ablation_b"):
            if "full" in means and other in means:
                holds = bool(means["full"] >= means[other] - 0.005)
                ordering[other] = holds
                logger.info(
                    "full mean accuracy %.4f vs %s %.4f: %s",
                    means["full"], other, means[other], "ok" if holds else "NOT within tolerance",
                )
        return ordering


HANDLERS = {
    "gen-data": GenerateDataHandler,
    "train": TrainHandler,
    "eval": EvaluateHandler,
    "profile": ProfileHandler,
    "explain": ExplainHandler,
    "ablate": AblationHandler,
}
