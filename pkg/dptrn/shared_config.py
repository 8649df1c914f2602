from typing import Dict, Tuple

# ==========================================
# Model defaults
# ==========================================

RELATION_HIDDEN: Tuple[int, ...] = (512, 128)
CLASSIFIER_HIDDEN: Tuple[int, ...] = (256, 128, 64)

DROPOUT_RATE = 0.1
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
POSITION_INIT_STD = 0.02
POSITION_BASE = 10000.0

VARIANTS: Tuple[str, ...] = ("full", "ablation_a", "ablation_b", "flatten_mlp")


# ==========================================
# Training defaults
# ==========================================

BATCH_SIZE = 32
EPOCHS = 60
LEARNING_RATE = 6e-4
L2_COEFF = 1e-4
ADAM_BETAS: Tuple[float, float] = (0.9, 0.999)
ADAM_EPS = 1e-8

DEFAULT_SEEDS: Tuple[int, ...] = (0, 1, 2, 3, 4)


# ==========================================
# Data defaults
# ==========================================

SPLIT_RATIOS: Tuple[float, float, float] = (0.7, 0.1, 0.2)
SPLIT_NAMES: Tuple[str, ...] = ("train", "valid", "test")
LABEL_COLUMN = "label"
SPLIT_COLUMN = "split"

SYNTHETIC_DEFAULTS = {
    "T": 30,
    "M": 8,
    "C": 5,
    "evidence_nodes_per_sample": 2,
    "signal_amplitude": 1.5,
    "noise_std": 1.0,
    "n_train": 5000,
    "n_valid": 500,
    "n_test": 1000,
}

# RMS entry of a class signature before amplitude scaling
SIGNATURE_RMS = 2.0


# ==========================================
# Dataset presets (sequence length, feature width, class count)
# ==========================================

PRESETS: Dict[str, Dict[str, int]] = {
    "te": {"T": 100, "M": 52, "C": 21},
    "kdd": {"T": 100, "M": 39, "C": 2},
    "pemfc": {"T": 30, "M": 6, "C": 9},
    "whell": {"T": 50, "M": 2, "C": 4},
    "synthetic": {"T": 30, "M": 8, "C": 5},
}


# ==========================================
# Random streams
# ==========================================

STREAM_IDS: Dict[str, int] = {
    "init": 1,
    "dropout": 2,
    "shuffle": 3,
    "data": 4,
    "signature": 5,
}


# ==========================================
# Artifact file names
# ==========================================

CHECKPOINT_FILE = "checkpoint.dptrn"
TRAIN_LOG_FILE = "train_log.csv"
RUN_CONFIG_FILE = "run_config.txt"
METRICS_JSON_FILE = "metrics.json"
METRICS_CSV_FILE = "metrics.csv"
PROFILE_CSV_FILE = "profile.csv"
RELATIONS_CSV_FILE = "relations.csv"
EXPLAIN_SUMMARY_FILE = "explain_summary.json"
EXPLAIN_REPORT_FILE = "explain_report.pdf"
ABLATION_RUNS_FILE = "ablation_runs.csv"
ABLATION_SUMMARY_FILE = "ablation_summary.csv"
EVIDENCE_SUFFIX = "_evidence.csv"

HEATMAP_KINDS: Tuple[str, ...] = ("rw_pre", "dpe", "rw")
HEATMAP_CELL_PX = 16
HEATMAP_COLORMAP = "RdBu_r"
HEATMAP_ABSENT_RGB: Tuple[int, int, int] = (128, 128, 128)


# ==========================================
# Profiler
# ==========================================

FLOP_CONVENTION = (
    "FLOPs counted as multiply-accumulates (1 MAC = 1 FLOP) of linear maps only: "
    "dense layers, the position query/key products and the pooling sum; "
    "activations, batch norm and softmax are excluded."
)


# ==========================================
# CLI exit codes
# ==========================================

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3
