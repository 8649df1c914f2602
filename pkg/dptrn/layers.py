"""Dense layer primitives with explicit forward and backward passes.

All arrays are float64. Batches are rows: a layer input of shape (batch, in)
maps to an output of shape (batch, out). Gradients accumulate into the
layer's grad buffers until `zero_grad` is called.
"""

from dataclasses import dataclass
import logging
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericalError, StateError

logger = logging.getLogger(__name__)

TRAIN = "train"
EVAL = "eval"


def check_finite(array: np.ndarray, where: str) -> np.ndarray:
    """Raise NumericalError if `array` holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NumericalError(f"{bad} non-finite value(s) in {where}")
    return array


def _check_mode(mode: str) -> str:
    if mode not in (TRAIN, EVAL):
        raise ConfigurationError(f"mode must be '{TRAIN}' or '{EVAL}', got {mode!r}")
    return mode


@dataclass
class Parameter:
    """A learnable array and its gradient buffer (same object the layer holds)."""

    name: str
    value: np.ndarray
    grad: np.ndarray
    decay: bool


class Linear:
    """Affine map out = x @ weight.T + bias with weight stored [out x in]."""

    def __init__(self, in_dim: int, out_dim: int, rng: Optional[np.random.Generator] = None, name: str = "linear"):
        self.name = name
        bound = math.sqrt(6.0 / in_dim)
        if rng is None:
            self.weight = np.zeros((out_dim, in_dim))
        else:
            self.weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"{self.name} input", (x.shape[0] if x.ndim else 0, self.in_dim), x.shape)
        return check_finite(x @ self.weight.T + self.bias, f"{self.name} forward")

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients for the forward call on `x`; return grad wrt `x`."""
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"{self.name} backward input", (x.shape[0] if x.ndim else 0, self.in_dim), x.shape)
        if grad_out.shape != (x.shape[0], self.out_dim):
            raise DimensionError(f"{self.name} grad_out", (x.shape[0], self.out_dim), grad_out.shape)
        self.grad_weight += grad_out.T @ x
        self.grad_bias += grad_out.sum(axis=0)
        return check_finite(grad_out @ self.weight, f"{self.name} backward")

    def zero_grad(self) -> None:
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)

    def parameters(self) -> List[Parameter]:
        return [
            Parameter(f"{self.name}.weight", self.weight, self.grad_weight, decay=True),
            Parameter(f"{self.name}.bias", self.bias, self.grad_bias, decay=False),
        ]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0.0, grad_out, 0.0)


class BatchNorm:
    """Per-column batch normalization with learnable scale and shift."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "batchnorm"):
        if eps <= 0.0:
            raise ConfigurationError(f"{name}: eps must be positive, got {eps}")
        if not 0.0 < momentum <= 1.0:
            raise ConfigurationError(f"{name}: momentum must lie in (0, 1], got {momentum}")
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.mode = TRAIN
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.grad_gamma = np.zeros(dim)
        self.grad_beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._x_hat: Optional[np.ndarray] = None
        self._inv_std: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def set_mode(self, mode: str) -> None:
        self.mode = _check_mode(mode)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"{self.name} input", (x.shape[0] if x.ndim else 0, self.dim), x.shape)
        if self.mode == TRAIN:
            if x.shape[0] < 2:
                raise StateError(f"{self.name}: train-mode batch norm needs at least 2 rows, got {x.shape[0]}")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        self._x_hat = x_hat
        self._inv_std = inv_std
        return check_finite(self.gamma * x_hat + self.beta, f"{self.name} forward")

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x_hat is None:
            raise StateError(f"{self.name}: backward called before forward")
        if grad_out.shape != self._x_hat.shape:
            raise DimensionError(f"{self.name} grad_out", self._x_hat.shape, grad_out.shape)
        x_hat = self._x_hat
        self.grad_gamma += np.sum(grad_out * x_hat, axis=0)
        self.grad_beta += np.sum(grad_out, axis=0)
        grad_x_hat = grad_out * self.gamma
        if self.mode == EVAL:
            return check_finite(grad_x_hat * self._inv_std, f"{self.name} backward")
        n = grad_out.shape[0]
        grad_in = (self._inv_std / n) * (
            n * grad_x_hat
            - np.sum(grad_x_hat, axis=0)
            - x_hat * np.sum(grad_x_hat * x_hat, axis=0)
        )
        return check_finite(grad_in, f"{self.name} backward")

    def zero_grad(self) -> None:
        self.grad_gamma.fill(0.0)
        self.grad_beta.fill(0.0)

    def parameters(self) -> List[Parameter]:
        return [
            Parameter(f"{self.name}.gamma", self.gamma, self.grad_gamma, decay=False),
            Parameter(f"{self.name}.beta", self.beta, self.grad_beta, decay=False),
        ]

    def buffers(self) -> List[Tuple[str, np.ndarray]]:
        return [
            (f"{self.name}.running_mean", self.running_mean),
            (f"{self.name}.running_var", self.running_var),
        ]

    def load_buffers(self, running_mean: np.ndarray, running_var: np.ndarray) -> None:
        if np.any(running_var < 0.0):
            raise NumericalError(f"{self.name}: running variance must be non-negative")
        self.running_mean = np.array(running_mean, dtype=np.float64)
        self.running_var = np.array(running_var, dtype=np.float64)


class Dropout:
    """Inverted dropout: survivors are scaled by 1/(1 - rate) in train mode."""

    def __init__(self, rate: float, rng: np.random.Generator, name: str = "dropout"):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"{name}: rate must lie in [0, 1), got {rate}")
        self.name = name
        self.rate = rate
        self.rng = rng
        self.mode = TRAIN
        self._scale: Optional[np.ndarray] = None

    def set_mode(self, mode: str) -> None:
        self.mode = _check_mode(mode)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.mode == EVAL or self.rate == 0.0:
            self._scale = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._scale = keep / (1.0 - self.rate)
        return x * self._scale

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._scale is None:
            return grad_out
        return grad_out * self._scale


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood of `labels` and its gradient wrt `logits`."""
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError("labels", (batch,), labels.shape)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ConfigurationError(f"labels must lie in [0, {n_classes}), got {labels.min()}..{labels.max()}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    rows = np.arange(batch)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= batch
    return loss, check_finite(grad, "softmax cross-entropy gradient")


@dataclass
class HiddenBlock:
    linear: Linear
    norm: BatchNorm
    dropout: Dropout


class DenseStack:
    """MLP of Linear -> BatchNorm -> ReLU -> Dropout blocks and a raw output Linear."""

    def __init__(
        self,
        widths: Sequence[int],
        init_rng: Optional[np.random.Generator],
        dropout_rng: np.random.Generator,
        dropout_rate: float = 0.1,
        bn_momentum: float = 0.1,
        bn_eps: float = 1e-5,
        name: str = "mlp",
    ):
        if len(widths) < 2:
            raise ConfigurationError(f"{name}: need at least input and output widths, got {list(widths)}")
        self.name = name
        self.widths = tuple(int(w) for w in widths)
        self.hidden: List[HiddenBlock] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-2], self.widths[1:-1])):
            self.hidden.append(
                HiddenBlock(
                    linear=Linear(fan_in, fan_out, init_rng, name=f"{name}.{i}.linear"),
                    norm=BatchNorm(fan_out, bn_momentum, bn_eps, name=f"{name}.{i}.norm"),
                    dropout=Dropout(dropout_rate, dropout_rng, name=f"{name}.{i}.dropout"),
                )
            )
        self.output = Linear(self.widths[-2], self.widths[-1], init_rng, name=f"{name}.out")
        self._cache: List[Tuple[np.ndarray, np.ndarray]] = []
        self._last_input: Optional[np.ndarray] = None

    def set_mode(self, mode: str) -> None:
        for block in self.hidden:
            block.norm.set_mode(mode)
            block.dropout.set_mode(mode)

    def forward(self, x: np.ndarray) -> np.ndarray:
        cache = []
        h = x
        for block in self.hidden:
            pre = block.norm.forward(block.linear.forward(h))
            cache.append((h, pre))
            h = block.dropout.forward(relu(pre))
        self._cache = cache
        self._last_input = h
        return self.output.forward(h)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._last_input is None:
            raise StateError(f"{self.name}: backward called before forward")
        grad = self.output.backward(self._last_input, grad_out)
        for block, (h, pre) in zip(reversed(self.hidden), reversed(self._cache)):
            grad = block.dropout.backward(grad)
            grad = relu_backward(pre, grad)
            grad = block.norm.backward(grad)
            grad = block.linear.backward(h, grad)
        return grad

    def activation_pattern(self) -> np.ndarray:
        """ReLU on/off masks of the last forward, flattened into one boolean vector."""
        if not self._cache:
            return np.zeros(0, dtype=bool)
        return np.concatenate([(pre > 0.0).ravel() for _, pre in self._cache])

    def linears(self) -> Iterator[Linear]:
        for block in self.hidden:
            yield block.linear
        yield self.output

    def norms(self) -> Iterator[BatchNorm]:
        for block in self.hidden:
            yield block.norm

    def zero_grad(self) -> None:
        for linear in self.linears():
            linear.zero_grad()
        for norm in self.norms():
            norm.zero_grad()

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for block in self.hidden:
            params += block.linear.parameters()
            params += block.norm.parameters()
        params += self.output.parameters()
        return params

    def buffers(self) -> List[Tuple[str, np.ndarray]]:
        buffers: List[Tuple[str, np.ndarray]] = []
        for norm in self.norms():
            buffers += norm.buffers()
        return buffers
