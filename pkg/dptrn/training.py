"""Mini-batch training with Adam or SGD, L2 decay and best-validation selection."""

from collections import OrderedDict
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import TrainConfig
from .data_loading import SampleSet
from .errors import DataError, DimensionError, DivergenceError, NumericalError
from .layers import Parameter, softmax_cross_entropy
from .model import DptrnModel
from .seeding import derive_rng

logger = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "val_acc", "seconds"]


# ==========================================
# Optimizers
# ==========================================


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, array: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(array), v=np.zeros_like(array), t=0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, config: TrainConfig) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns the new parameter and state."""
    if state.m.shape != param.shape or grad.shape != param.shape:
        raise DimensionError("adam state", param.shape, state.m.shape if state.m.shape != param.shape else grad.shape)
    beta1, beta2 = config.adam_betas
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    updated = param - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return updated, AdamState(m=m, v=v, t=t)


class Adam:
    def __init__(self, params: Sequence[Parameter], config: TrainConfig):
        self.params = list(params)
        self.config = config
        self.states = [AdamState.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for i, param in enumerate(self.params):
            updated, self.states[i] = adam_step(param.value, param.grad, self.states[i], self.config)
            np.copyto(param.value, updated)


class SGD:
    def __init__(self, params: Sequence[Parameter], config: TrainConfig):
        self.params = list(params)
        self.config = config

    def step(self) -> None:
        for param in self.params:
            param.value -= self.config.learning_rate * param.grad


def make_optimizer(params: Sequence[Parameter], config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(params, config)
    return Adam(params, config)


def apply_l2(params: Sequence[Parameter], l2_coeff: float) -> float:
    """Add the L2 gradient to decayed parameters and return the penalty l2 * sum ||W||^2."""
    if l2_coeff == 0.0:
        return 0.0
    penalty = 0.0
    for param in params:
        if param.decay:
            penalty += float(np.sum(param.value * param.value))
            param.grad += 2.0 * l2_coeff * param.value
    return l2_coeff * penalty


def clip_gradients(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most `max_norm`; return the norm before clipping."""
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if norm > max_norm:
        scale = max_norm / norm
        for param in params:
            param.grad *= scale
    return norm


# ==========================================
# Scheduling and bookkeeping
# ==========================================


def batch_order(n: int, seed: int, epoch: int, batch_size: int) -> List[np.ndarray]:
    """Index batches for one epoch; a trailing batch of one sample is dropped."""
    order = derive_rng(seed, "shuffle", epoch).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    seconds: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    selected_epoch: int = 0

    def to_frame(self, record_timing: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame([vars(r) for r in self.records], columns=TRAIN_LOG_COLUMNS)
        if not record_timing:
            frame["seconds"] = np.nan
        return frame

    def write_csv(self, path, record_timing: bool = False) -> Path:
        path = Path(path)
        self.to_frame(record_timing).to_csv(path, index=False, lineterminator="\n")
        logger.info("Train log written to %s (selected epoch %d)", path, self.selected_epoch)
        return path


def evaluate_loss_accuracy(model: DptrnModel, samples: SampleSet) -> Tuple[float, float]:
    """Eval-mode cross-entropy and accuracy; running statistics are left untouched."""
    if len(samples) == 0:
        return float("nan"), float("nan")
    logits = model.logits(samples.nodes)
    loss, _ = softmax_cross_entropy(logits, samples.labels)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == samples.labels))
    return loss, accuracy


# ==========================================
# Training loop
# ==========================================


def train(
    model: DptrnModel,
    splits: Dict[str, SampleSet],
    config: TrainConfig,
) -> Tuple["OrderedDict[str, np.ndarray]", TrainLog]:
    """Train `model` on splits['train'], selecting the epoch with the best validation accuracy.

    The model ends holding the selected parameters, in eval mode.
    """
    train_set = splits["train"]
    valid_set: Optional[SampleSet] = splits.get("valid")
    if len(train_set) < 2:
        raise DataError(f"Training needs at least 2 samples, got {len(train_set)}")
    if train_set.nodes.shape[1:] != (model.config.T, model.config.M):
        raise DimensionError("training samples", (len(train_set), model.config.T, model.config.M), train_set.nodes.shape)
    if int(train_set.labels.max()) >= model.config.C:
        raise DataError(f"Training label {int(train_set.labels.max())} out of range for C={model.config.C}")
    if valid_set is None or len(valid_set) == 0:
        logger.warning("Validation split is empty; the last epoch will be selected")
        valid_set = None

    params = model.parameters()
    optimizer = make_optimizer(params, config)
    log = TrainLog()
    best_state = None
    best_acc = -math.inf

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        model.train()
        total, seen = 0.0, 0
        for batch_index, indices in enumerate(batch_order(len(train_set), config.seed, epoch, config.batch_size)):
            model.zero_grad()
            try:
                loss = model.loss_and_backward(train_set.nodes[indices], train_set.labels[indices])
            except NumericalError as exc:
                raise DivergenceError(epoch, batch_index, float("nan")) from exc
            loss += apply_l2(params, config.l2_coeff)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, batch_index, loss)
            if config.grad_clip is not None:
                clip_gradients(params, config.grad_clip)
            optimizer.step()
            total += loss * len(indices)
            seen += len(indices)
        train_loss = total / seen

        if valid_set is not None:
            val_loss, val_acc = evaluate_loss_accuracy(model, valid_set)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        seconds = time.perf_counter() - started
        log.records.append(EpochRecord(epoch, train_loss, val_loss, val_acc, seconds))
        logger.info(
            "epoch %d/%d train_loss=%.5f val_loss=%.5f val_acc=%.4f (%.2fs)",
            epoch, config.epochs, train_loss, val_loss, val_acc, seconds,
        )

        if valid_set is None:
            best_state, log.selected_epoch = model.state_dict(), epoch
        elif val_acc > best_acc:
            best_acc = val_acc
            best_state, log.selected_epoch = model.state_dict(), epoch

    model.load_state_dict(best_state)
    model.eval()
    logger.info("Selected epoch %d", log.selected_epoch)
    return best_state, log
