"""Command-line entry point: gen-data | train | eval | profile | explain | ablate."""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from .config import RunConfig, load_run_config_file, validated
from .errors import ConfigurationError, DataError, DimensionError, NumericalError, StateError
from .program_handlers import HANDLERS
from .shared_config import EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, EXIT_USAGE, PRESETS, VARIANTS

logger = logging.getLogger(__name__)

# flag dest -> RunConfig key
FLAG_KEYS = {
    "seed": "seed",
    "T": "T",
    "M": "M",
    "C": "C",
    "variant": "variant",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "l2": "l2_coeff",
    "optimizer": "optimizer",
    "grad_clip": "grad_clip",
    "dropout": "dropout_rate",
    "out_dir": "out_dir",
    "label_col": "label_col",
    "no_header": "has_header",
    "data_dir": "data_dir",
    "data": "data_path",
    "checkpoint": "checkpoint",
    "amplitude": "signal_amplitude",
    "noise": "noise_std",
    "evidence_nodes": "evidence_nodes_per_sample",
    "n_train": "n_train",
    "n_valid": "n_valid",
    "n_test": "n_test",
    "evidence": "evidence_path",
    "seeds": "seeds",
    "jobs": "jobs",
    "explain_samples": "explain_samples",
    "record_timing": "record_timing",
}


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the usage code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default(key: str) -> str:
    return f"(default: {RunConfig.model_fields[key].default})"


def _seed_list(text: str):
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    general = parser.add_argument_group("run")
    general.add_argument("--config", help="flat key = value run config; flags override its values")
    general.add_argument("--preset", choices=sorted(PRESETS), help="fill T, M and C from a dataset preset")
    general.add_argument("--seed", type=int, help=f"run seed {_default('seed')}")
    general.add_argument("--out-dir", dest="out_dir", help=f"output directory {_default('out_dir')}")
    general.add_argument("--verbose", action="store_true", help="debug logging")

    model = parser.add_argument_group("model")
    model.add_argument("--T", type=int, help=f"nodes per window {_default('T')}")
    model.add_argument("--M", type=int, help=f"features per node {_default('M')}")
    model.add_argument("--C", type=int, help=f"number of classes {_default('C')}")
    model.add_argument("--variant", choices=VARIANTS, help=f"architecture variant {_default('variant')}")
    model.add_argument("--dropout", type=float, help=f"dropout rate {_default('dropout_rate')}")

    training = parser.add_argument_group("training")
    training.add_argument("--epochs", type=int, help=_default("epochs"))
    training.add_argument("--batch-size", dest="batch_size", type=int, help=_default("batch_size"))
    training.add_argument("--lr", type=float, help=f"learning rate {_default('learning_rate')}")
    training.add_argument("--l2", type=float, help=f"L2 coefficient {_default('l2_coeff')}")
    training.add_argument("--optimizer", choices=["adam", "sgd"], help=_default("optimizer"))
    training.add_argument("--grad-clip", dest="grad_clip", type=float, help="global gradient norm limit (default: off)")
    training.add_argument("--record-timing", dest="record_timing", action="store_const", const=True,
                          help="fill the seconds column of the train log (makes it non-reproducible)")

    data = parser.add_argument_group("data")
    data.add_argument("--data-dir", dest="data_dir", help="directory with train.csv, valid.csv, test.csv")
    data.add_argument("--data", help="single CSV, split by its split column or 70/10/20 per class")
    data.add_argument("--label-col", dest="label_col", help=f"label column name, or position without header {_default('label_col')}")
    data.add_argument("--no-header", dest="no_header", action="store_const", const=False, help="CSV files have no header row")
    data.add_argument("--checkpoint", help="checkpoint path (default: <out-dir>/checkpoint.dptrn)")
    data.add_argument("--amplitude", type=float, help=f"synthetic signal amplitude {_default('signal_amplitude')}")
    data.add_argument("--noise", type=float, help=f"synthetic noise std {_default('noise_std')}")
    data.add_argument("--evidence-nodes", dest="evidence_nodes", type=int,
                      help=f"synthetic evidence nodes per sample {_default('evidence_nodes_per_sample')}")
    data.add_argument("--n-train", dest="n_train", type=int, help=_default("n_train"))
    data.add_argument("--n-valid", dest="n_valid", type=int, help=_default("n_valid"))
    data.add_argument("--n-test", dest="n_test", type=int, help=_default("n_test"))

    extra = parser.add_argument_group("explain and ablate")
    extra.add_argument("--evidence", help="evidence sidecar CSV (default: <data-dir>/test_evidence.csv)")
    extra.add_argument("--explain-samples", dest="explain_samples", type=int, help=f"samples rendered as images {_default('explain_samples')}")
    extra.add_argument("--seeds", type=_seed_list, help="comma-separated ablation seeds (default: 0,1,2,3,4)")
    extra.add_argument("--jobs", type=int, help=f"parallel ablation workers {_default('jobs')}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="dptrn", description="Relation-network fault diagnosis on time-series windows.")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    descriptions = {
        "gen-data": "write the synthetic fault task as CSV splits with evidence sidecars",
        "train": "train a model and write checkpoint + train log",
        "eval": "score a checkpoint on the test split",
        "profile": "print parameter and FLOP counts for a config",
        "explain": "export relation weights, heatmaps and a PDF report",
        "ablate": "train all variants over several seeds and compare",
    }
    for name, help_text in descriptions.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        add_common_arguments(sub)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then the preset, then explicit flags."""
    values: Dict[str, Any] = {}
    if args.config:
        values.update(load_run_config_file(args.config))
    if args.preset:
        values.update(PRESETS[args.preset])
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = value
    return validated(RunConfig, **values)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        handler = HANDLERS[args.command](config=config)
        handler.run()
    except (ConfigurationError, StateError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, DimensionError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
