"""The relation network: relation unit, position terms, pooling and classifier.

A window holds T nodes as rows; rows 0..T-2 are historical nodes and row
T-1 is the current node being diagnosed. Node row r has position r.
"""

from collections import OrderedDict
from dataclasses import dataclass
import logging
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import ModelConfig
from .errors import ConfigurationError, DimensionError, StateError
from .layers import EVAL, TRAIN, DenseStack, Parameter, check_finite, softmax, softmax_cross_entropy
from .seeding import derive_rng
from .shared_config import POSITION_BASE, VARIANTS

logger = logging.getLogger(__name__)


# ==========================================
# Position embeddings
# ==========================================


def absolute_position_embedding(pos: int, d: int) -> np.ndarray:
    """Sinusoidal embedding of position `pos` with `d` entries.

    Entries 2i and 2i+1 are sin and cos of pos / 10000^(2i/d); for odd `d`
    the last entry is a sin term.
    """
    if pos < 0 or d < 1:
        raise ConfigurationError(f"position embedding needs pos >= 0 and d >= 1, got pos={pos}, d={d}")
    index = np.arange(d)
    angle = pos / np.power(POSITION_BASE, 2.0 * (index // 2) / d)
    return np.where(index % 2 == 0, np.sin(angle), np.cos(angle))


def position_table(n_positions: int, d: int) -> np.ndarray:
    return np.stack([absolute_position_embedding(pos, d) for pos in range(n_positions)])


def decoupling_position_embedding(p_query: np.ndarray, p_key: np.ndarray, k, current: int):
    """Position term <PE(k) p_query, PE(current) p_key> of historical node `k`.

    `k` may be one index (returns a float) or an array of indices (returns
    one term per index).
    """
    ks = np.asarray(k, dtype=np.int64)
    if ks.size and (ks.min() < 0 or ks.max() >= current):
        raise ConfigurationError(f"historical index must satisfy 0 <= k < current, got k={k}, current={current}")
    m = p_query.shape[0]
    query = position_table(current, m)[ks] @ p_query
    key = absolute_position_embedding(current, m) @ p_key
    terms = query @ key
    return float(terms) if ks.ndim == 0 else terms


# ==========================================
# Relation unit input and pooling
# ==========================================


def build_relation_input(d_current: np.ndarray, d_hist: np.ndarray) -> np.ndarray:
    """Concatenate [current, hist, current - hist, current + hist] along the last axis."""
    if d_current.shape != d_hist.shape:
        raise DimensionError("historical node", d_current.shape, d_hist.shape)
    return np.concatenate([d_current, d_hist, d_current - d_hist, d_current + d_hist], axis=-1)


@dataclass
class RelationReport:
    """Relation weights of one sample over its T-1 historical nodes."""

    rw_pre: np.ndarray
    dpe: np.ndarray
    rw: np.ndarray
    hi: np.ndarray


def combine_and_pool(rw_pre: np.ndarray, dpe: np.ndarray, history: np.ndarray):
    """rw = (rw_pre + dpe) / sqrt(M) and the weighted sum of history rows.

    Takes one sample (rw_pre [T-1], history [T-1, M]) and returns a
    RelationReport, or a batch (rw_pre [B, T-1], history [B, T-1, M]) and
    returns a RelationBatch. `dpe` [T-1] is shared by every sample.
    """
    if history.ndim not in (2, 3):
        raise DimensionError("history", ("[B,] T-1", "M"), history.shape)
    n_hist, m = history.shape[-2:]
    if rw_pre.shape != history.shape[:-1]:
        raise DimensionError("rw_pre", history.shape[:-1], rw_pre.shape)
    if dpe.shape != (n_hist,):
        raise DimensionError("dpe", (n_hist,), dpe.shape)
    rw = (rw_pre + dpe) / math.sqrt(m)
    hi = np.einsum("...k,...km->...m", rw, history)
    report = RelationBatch if history.ndim == 3 else RelationReport
    return report(rw_pre=rw_pre, dpe=dpe, rw=rw, hi=hi)


@dataclass
class RelationBatch:
    """Relation weights of a batch; `dpe` is shared by every sample."""

    rw_pre: np.ndarray
    dpe: np.ndarray
    rw: np.ndarray
    hi: np.ndarray

    def __len__(self) -> int:
        return self.rw_pre.shape[0]

    def report(self, index: int) -> RelationReport:
        return RelationReport(
            rw_pre=self.rw_pre[index].copy(),
            dpe=self.dpe.copy(),
            rw=self.rw[index].copy(),
            hi=self.hi[index].copy(),
        )

    def __iter__(self) -> Iterator[RelationReport]:
        for index in range(len(self)):
            yield self.report(index)


# ==========================================
# Model
# ==========================================


class DptrnModel:
    """Relation network for one ModelConfig; all variants share this class."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.variant not in VARIANTS:
            raise ConfigurationError(f"Unknown variant: {config.variant}")
        self.config = config
        self.seed = seed
        self.mode = TRAIN
        init_rng = derive_rng(seed, "init")
        dropout_rng = derive_rng(seed, "dropout")
        m = config.M

        self.relation: Optional[DenseStack] = None
        if config.uses_relation_unit:
            self.relation = DenseStack(
                (config.relation_input_dim, *config.relation_hidden, 1),
                init_rng,
                dropout_rng,
                dropout_rate=config.dropout_rate,
                bn_momentum=config.bn_momentum,
                bn_eps=config.bn_eps,
                name="relation",
            )

        self.p_query: Optional[np.ndarray] = None
        self.p_key: Optional[np.ndarray] = None
        if config.uses_dpe:
            self.p_query = init_rng.normal(0.0, config.position_init_std, size=(m, m))
            self.p_key = init_rng.normal(0.0, config.position_init_std, size=(m, m))
            self.grad_p_query = np.zeros_like(self.p_query)
            self.grad_p_key = np.zeros_like(self.p_key)

        self.classifier = DenseStack(
            (config.classifier_input_dim, *config.classifier_hidden, config.C),
            init_rng,
            dropout_rng,
            dropout_rate=config.dropout_rate,
            bn_momentum=config.bn_momentum,
            bn_eps=config.bn_eps,
            name="classifier",
        )
        self.positions = position_table(config.T, m)
        self._cache: Dict[str, np.ndarray] = {}
        logger.debug("Built %s model T=%d M=%d C=%d with %d learnables",
                     config.variant, config.T, m, config.C, self.num_learnable())

    # ---- mode and parameter bookkeeping ----

    def train(self) -> "DptrnModel":
        self._set_mode(TRAIN)
        return self

    def eval(self) -> "DptrnModel":
        self._set_mode(EVAL)
        return self

    def _set_mode(self, mode: str) -> None:
        self.mode = mode
        for stack in self._stacks():
            stack.set_mode(mode)

    def _stacks(self) -> List[DenseStack]:
        return [s for s in (self.relation, self.classifier) if s is not None]

    def zero_grad(self) -> None:
        for stack in self._stacks():
            stack.zero_grad()
        if self.p_query is not None:
            self.grad_p_query.fill(0.0)
            self.grad_p_key.fill(0.0)

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        if self.relation is not None:
            params += self.relation.parameters()
        if self.p_query is not None:
            params.append(Parameter("p_query", self.p_query, self.grad_p_query, decay=True))
            params.append(Parameter("p_key", self.p_key, self.grad_p_key, decay=True))
        params += self.classifier.parameters()
        return params

    def buffers(self) -> List[Tuple[str, np.ndarray]]:
        buffers: List[Tuple[str, np.ndarray]] = []
        for stack in self._stacks():
            buffers += stack.buffers()
        return buffers

    def num_learnable(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for param in self.parameters():
            state[param.name] = param.value.copy()
        for name, buffer in self.buffers():
            state[name] = buffer.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy arrays into the model in place; names and shapes must match exactly."""
        expected = self.state_dict()
        if list(state) != list(expected):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise ConfigurationError(f"State does not fit model: missing={missing}, unexpected={extra}")
        for name, array in state.items():
            if np.shape(array) != expected[name].shape:
                raise DimensionError(f"state '{name}'", expected[name].shape, np.shape(array))
        for param in self.parameters():
            np.copyto(param.value, state[param.name])
        for stack in self._stacks():
            for norm in stack.norms():
                norm.load_buffers(state[f"{norm.name}.running_mean"], state[f"{norm.name}.running_var"])

    # ---- forward ----

    def _check_nodes(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.float64)
        expected = (nodes.shape[0] if nodes.ndim else 0, self.config.T, self.config.M)
        if nodes.ndim != 3 or nodes.shape[1:] != expected[1:]:
            raise DimensionError("nodes", expected, nodes.shape)
        if nodes.shape[0] == 0:
            raise DimensionError("nodes", (1,) + expected[1:], nodes.shape)
        return check_finite(nodes, "model input")

    def _features(self, nodes: np.ndarray) -> np.ndarray:
        if self.config.variant == "ablation_b":
            return nodes + self.positions[None, :, :]
        return nodes

    def _dpe(self) -> np.ndarray:
        if self.p_query is None:
            return np.zeros(self.config.T - 1)
        return decoupling_position_embedding(self.p_query, self.p_key, np.arange(self.config.T - 1), self.config.T - 1)

    def relation_weights_pre(self, nodes: np.ndarray) -> np.ndarray:
        """Relation unit output for every historical node, all B*(T-1) pairs in one batch."""
        if self.relation is None:
            raise ConfigurationError("flatten_mlp has no relation unit")
        nodes = self._check_nodes(nodes)
        feats = self._features(nodes)
        return self._relation_forward(feats)

    def _relation_forward(self, feats: np.ndarray) -> np.ndarray:
        batch, t, m = feats.shape
        history = feats[:, :-1, :]
        current = np.broadcast_to(feats[:, -1:, :], history.shape)
        pairs = build_relation_input(current, history).reshape(batch * (t - 1), 4 * m)
        return self.relation.forward(pairs).reshape(batch, t - 1)

    def relation_weights_pre_sequential(self, nodes: np.ndarray) -> np.ndarray:
        """Node-by-node evaluation of the relation unit; eval mode only."""
        if self.relation is None:
            raise ConfigurationError("flatten_mlp has no relation unit")
        if self.mode != EVAL:
            raise StateError("sequential relation evaluation needs eval mode (single-row batches)")
        feats = self._features(self._check_nodes(nodes))
        batch, t, _ = feats.shape
        out = np.empty((batch, t - 1))
        for b in range(batch):
            for k in range(t - 1):
                row = build_relation_input(feats[b, -1], feats[b, k])[None, :]
                out[b, k] = self.relation.forward(row)[0, 0]
        return out

    def forward(self, nodes: np.ndarray) -> Tuple[np.ndarray, Optional[RelationBatch]]:
        """Logits [B, C] and, except for flatten_mlp, the batch's relation weights."""
        nodes = self._check_nodes(nodes)
        batch, t, m = nodes.shape
        if self.relation is None:
            flat = nodes.reshape(batch, t * m)
            logits = self.classifier.forward(flat)
            self._cache = {"nodes": nodes}
            return logits, None

        feats = self._features(nodes)
        history = feats[:, :-1, :]
        current = feats[:, -1, :]
        relations = combine_and_pool(self._relation_forward(feats), self._dpe(), history)
        logits = self.classifier.forward(np.concatenate([relations.hi, current], axis=1))
        self._cache = {"nodes": nodes, "history": history, "rw": relations.rw}
        return logits, relations

    # ---- backward ----

    def _require_train(self, what: str) -> None:
        if self.mode != TRAIN:
            raise StateError(f"{what} is only available in train mode")
        if not self._cache:
            raise StateError(f"{what} called before forward")

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate gradients of every learnable for the last forward; return grad wrt nodes."""
        self._require_train("backward")
        grad_in = self.classifier.backward(grad_logits)
        nodes = self._cache["nodes"]
        if self.relation is None:
            return grad_in.reshape(nodes.shape)

        m = self.config.M
        history = self._cache["history"]
        rw = self._cache["rw"]
        grad_hi = grad_in[:, :m]
        grad_current = grad_in[:, m:].copy()
        grad_rw = np.einsum("bm,bkm->bk", grad_hi, history)
        grad_history = rw[:, :, None] * grad_hi[:, None, :]
        grad_rw_pre = grad_rw / math.sqrt(m)

        if self.p_query is not None:
            self._accumulate_position_grads(grad_rw_pre.sum(axis=0))

        grad_pairs = self.backward_relation(grad_rw_pre)
        g_cur, g_hist, g_diff, g_sum = np.split(grad_pairs, 4, axis=-1)
        grad_current += (g_cur + g_diff + g_sum).sum(axis=1)
        grad_history += g_hist - g_diff + g_sum

        grad_nodes = np.concatenate([grad_history, grad_current[:, None, :]], axis=1)
        return check_finite(grad_nodes, "model backward")

    def backward_relation(self, grad_rw_pre: np.ndarray) -> np.ndarray:
        """Push an upstream gradient [B, T-1] through the shared relation unit.

        Gradients of the one relation MLP are summed over every node
        application. Returns grad wrt the relation input, shaped [B, T-1, 4M].
        """
        self._require_train("backward_relation")
        if self.relation is None:
            raise ConfigurationError("flatten_mlp has no relation unit")
        batch = self._cache["nodes"].shape[0]
        n_hist = self.config.T - 1
        if grad_rw_pre.shape != (batch, n_hist):
            raise DimensionError("grad_rw_pre", (batch, n_hist), grad_rw_pre.shape)
        grad = self.relation.backward(grad_rw_pre.reshape(batch * n_hist, 1))
        return grad.reshape(batch, n_hist, self.config.relation_input_dim)

    def _accumulate_position_grads(self, grad_dpe: np.ndarray) -> None:
        hist_pe = self.positions[:-1]
        current_pe = self.positions[-1]
        query = hist_pe @ self.p_query
        key = current_pe @ self.p_key
        self.grad_p_query += hist_pe.T @ np.outer(grad_dpe, key)
        self.grad_p_key += np.outer(current_pe, query.T @ grad_dpe)

    # ---- losses and predictions ----

    def loss_and_backward(self, nodes: np.ndarray, labels: Sequence[int]) -> float:
        """Cross-entropy of one batch; gradients are accumulated, not reset."""
        if self.mode != TRAIN:
            raise StateError("backward is only available in train mode")
        logits, _ = self.forward(nodes)
        loss, grad_logits = softmax_cross_entropy(logits, labels)
        self.backward(grad_logits)
        return loss

    def loss(self, nodes: np.ndarray, labels: Sequence[int]) -> float:
        logits, _ = self.forward(nodes)
        return softmax_cross_entropy(logits, labels)[0]

    def logits(self, nodes: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode logits computed in chunks; the previous mode is restored."""
        nodes = np.asarray(nodes, dtype=np.float64)
        previous = self.mode
        self.eval()
        try:
            chunks = [self.forward(nodes[i:i + batch_size])[0] for i in range(0, len(nodes), batch_size)]
        finally:
            self._set_mode(previous)
        if not chunks:
            return np.zeros((0, self.config.C))
        return np.concatenate(chunks, axis=0)

    def predict_proba(self, nodes: np.ndarray) -> np.ndarray:
        return softmax(self.logits(nodes))

    def predict(self, nodes: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum, so ties go to the lowest class
        return np.argmax(self.logits(nodes), axis=1)

    def relation_batch(self, nodes: np.ndarray, batch_size: int = 256) -> RelationBatch:
        """Eval-mode relation weights for any number of samples."""
        if self.relation is None:
            raise ConfigurationError("flatten_mlp has no relation unit")
        nodes = np.asarray(nodes, dtype=np.float64)
        previous = self.mode
        self.eval()
        try:
            parts = [self.forward(nodes[i:i + batch_size])[1] for i in range(0, len(nodes), batch_size)]
        finally:
            self._set_mode(previous)
        if not parts:
            raise DimensionError("nodes", (1, self.config.T, self.config.M), nodes.shape)
        return RelationBatch(
            rw_pre=np.concatenate([p.rw_pre for p in parts]),
            dpe=parts[0].dpe,
            rw=np.concatenate([p.rw for p in parts]),
            hi=np.concatenate([p.hi for p in parts]),
        )
