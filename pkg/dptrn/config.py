"""Validated configuration models and the flat run-config file format."""

from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .shared_config import (
    ADAM_BETAS,
    ADAM_EPS,
    BATCH_SIZE,
    BN_EPS,
    BN_MOMENTUM,
    CLASSIFIER_HIDDEN,
    DEFAULT_SEEDS,
    DROPOUT_RATE,
    EPOCHS,
    L2_COEFF,
    LABEL_COLUMN,
    LEARNING_RATE,
    POSITION_INIT_STD,
    RELATION_HIDDEN,
    SYNTHETIC_DEFAULTS,
)

Variant = Literal["full", "ablation_a", "ablation_b", "flatten_mlp"]

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class ModelConfig(BaseModel):
    """Dimensions and architecture of one network."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    T: int = Field(ge=2)
    M: int = Field(ge=1)
    C: int = Field(ge=1)
    relation_hidden: Tuple[int, ...] = RELATION_HIDDEN
    classifier_hidden: Tuple[int, ...] = CLASSIFIER_HIDDEN
    variant: Variant = "full"
    dropout_rate: float = Field(DROPOUT_RATE, ge=0.0, lt=1.0)
    bn_momentum: float = Field(BN_MOMENTUM, gt=0.0, le=1.0)
    bn_eps: float = Field(BN_EPS, gt=0.0)
    position_init_std: float = Field(POSITION_INIT_STD, ge=0.0)

    @field_validator("relation_hidden", "classifier_hidden")
    @classmethod
    def check_widths(cls, widths: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        return widths

    @property
    def uses_relation_unit(self) -> bool:
        return self.variant != "flatten_mlp"

    @property
    def uses_dpe(self) -> bool:
        return self.variant == "full"

    @property
    def relation_input_dim(self) -> int:
        return 4 * self.M

    @property
    def classifier_input_dim(self) -> int:
        if self.variant == "flatten_mlp":
            return self.T * self.M
        return 2 * self.M


class TrainConfig(BaseModel):
    """Optimizer, regularization and scheduling settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    batch_size: int = Field(BATCH_SIZE, ge=2)
    epochs: int = Field(EPOCHS, ge=1)
    # 0 is accepted so a null update can be exercised
    learning_rate: float = Field(LEARNING_RATE, ge=0.0)
    l2_coeff: float = Field(L2_COEFF, ge=0.0)
    seed: int = Field(0, ge=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    adam_betas: Tuple[float, float] = ADAM_BETAS
    adam_eps: float = Field(ADAM_EPS, gt=0.0)
    grad_clip: Optional[float] = Field(None, gt=0.0)
    record_timing: bool = False


class SyntheticSpec(BaseModel):
    """Parameters of the synthetic fault generator."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    T: int = Field(SYNTHETIC_DEFAULTS["T"], ge=2)
    M: int = Field(SYNTHETIC_DEFAULTS["M"], ge=1)
    C: int = Field(SYNTHETIC_DEFAULTS["C"], ge=1)
    evidence_nodes_per_sample: int = Field(SYNTHETIC_DEFAULTS["evidence_nodes_per_sample"], ge=0)
    signal_amplitude: float = Field(SYNTHETIC_DEFAULTS["signal_amplitude"], ge=0.0)
    noise_std: float = Field(SYNTHETIC_DEFAULTS["noise_std"], ge=0.0)
    n_train: int = Field(SYNTHETIC_DEFAULTS["n_train"], ge=0)
    n_valid: int = Field(SYNTHETIC_DEFAULTS["n_valid"], ge=0)
    n_test: int = Field(SYNTHETIC_DEFAULTS["n_test"], ge=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_evidence_fits(self):
        if self.evidence_nodes_per_sample >= self.T:
            raise ValueError(
                f"evidence_nodes_per_sample ({self.evidence_nodes_per_sample}) must be "
                f"smaller than T ({self.T}); evidence only goes on historical nodes"
            )
        return self


class RunConfig(BaseModel):
    """Flat union of every setting a CLI run can take."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, ge=0)
    T: int = Field(SYNTHETIC_DEFAULTS["T"], ge=2)
    M: int = Field(SYNTHETIC_DEFAULTS["M"], ge=1)
    C: int = Field(SYNTHETIC_DEFAULTS["C"], ge=1)
    variant: Variant = "full"
    relation_hidden: Tuple[int, ...] = RELATION_HIDDEN
    classifier_hidden: Tuple[int, ...] = CLASSIFIER_HIDDEN
    dropout_rate: float = DROPOUT_RATE

    batch_size: int = BATCH_SIZE
    epochs: int = EPOCHS
    learning_rate: float = LEARNING_RATE
    l2_coeff: float = L2_COEFF
    optimizer: Literal["adam", "sgd"] = "adam"
    grad_clip: Optional[float] = None
    record_timing: bool = False

    evidence_nodes_per_sample: int = SYNTHETIC_DEFAULTS["evidence_nodes_per_sample"]
    signal_amplitude: float = SYNTHETIC_DEFAULTS["signal_amplitude"]
    noise_std: float = SYNTHETIC_DEFAULTS["noise_std"]
    n_train: int = SYNTHETIC_DEFAULTS["n_train"]
    n_valid: int = SYNTHETIC_DEFAULTS["n_valid"]
    n_test: int = SYNTHETIC_DEFAULTS["n_test"]

    data_dir: Optional[str] = None
    data_path: Optional[str] = None
    out_dir: str = "out"
    checkpoint: Optional[str] = None
    evidence_path: Optional[str] = None
    label_col: str = LABEL_COLUMN
    has_header: bool = True
    seeds: Tuple[int, ...] = Field(DEFAULT_SEEDS, min_length=1)
    jobs: int = Field(1, ge=1)
    explain_samples: int = Field(4, ge=0)

    def model_settings(self, variant: Optional[str] = None) -> ModelConfig:
        return validated(
            ModelConfig,
            T=self.T,
            M=self.M,
            C=self.C,
            relation_hidden=self.relation_hidden,
            classifier_hidden=self.classifier_hidden,
            variant=variant or self.variant,
            dropout_rate=self.dropout_rate,
        )

    def train_settings(self, seed: Optional[int] = None) -> TrainConfig:
        return validated(
            TrainConfig,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            l2_coeff=self.l2_coeff,
            seed=self.seed if seed is None else seed,
            optimizer=self.optimizer,
            grad_clip=self.grad_clip,
            record_timing=self.record_timing,
        )

    def synthetic_settings(self) -> SyntheticSpec:
        return validated(
            SyntheticSpec,
            T=self.T,
            M=self.M,
            C=self.C,
            evidence_nodes_per_sample=self.evidence_nodes_per_sample,
            signal_amplitude=self.signal_amplitude,
            noise_std=self.noise_std,
            n_train=self.n_train,
            n_valid=self.n_valid,
            n_test=self.n_test,
            seed=self.seed,
        )


def validated(model_cls: Type[ConfigT], **values: Any) -> ConfigT:
    """Build a config model, turning validation failures into ConfigurationError."""
    try:
        return model_cls(**values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model_cls.__name__}: {err['msg']}"
            for err in exc.errors()
        )
        raise ConfigurationError(f"Invalid {model_cls.__name__}: {problems}") from exc


# ==========================================
# Flat key = value run-config files
# ==========================================

_TUPLE_KEYS = {"relation_hidden", "classifier_hidden", "seeds"}


def _coerce_text(key: str, text: str) -> Any:
    if key in _TUPLE_KEYS:
        return tuple(int(part) for part in text.split(",") if part.strip())
    if text.lower() in {"none", ""}:
        return None
    return text


def parse_run_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parse `key = value` lines; unknown keys and malformed lines are rejected."""
    known = set(RunConfig.model_fields)
    values: Dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"{source}:{line_no}: unknown config key '{key}'")
        try:
            values[key] = _coerce_text(key, value)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{line_no}: bad value for '{key}': {value!r}") from exc
    return values


def load_run_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"Config file not found: {path}") from exc
    return parse_run_config_text(text, source=str(path))


def format_run_config(config: RunConfig) -> str:
    """Serialize a run config so that parsing it back gives the same config."""
    lines = []
    for key, value in sorted(config.model_dump().items()):
        if value is None:
            continue
        if isinstance(value, (tuple, list)):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
