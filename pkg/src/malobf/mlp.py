"""Dense ReLU network with a sigmoid output, trained by SGD with Nesterov momentum.

Everything is plain numpy; the first layer accepts scipy CSR input so binary
multi-hot rows never have to be densified.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset, vectors_to_csr
from .feature_vocab import FeatureVector

log = logging.getLogger(__name__)

BCE_EPS = 1e-7
PAPER_HIDDEN = (1024,) * 20
DESK_HIDDEN = (128,) * 4


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class ModelParams:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise ValueError(f"layer dims do not chain: {prev.out_dim} -> {cur.in_dim}")
        for layer in self.layers:
            if layer.bias.shape != (layer.out_dim,):
                raise ValueError("bias shape does not match layer output")
        if self.layers[-1].out_dim != 1:
            raise ValueError("output layer must have a single unit")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self.layers[:-1])

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def all_finite(self) -> bool:
        return all(np.isfinite(l.weights).all() and np.isfinite(l.bias).all() for l in self.layers)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


def init_model(input_dim: int, hidden_widths: Sequence[int], seed: int = 0, dtype=np.float64) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    hidden_widths = tuple(int(w) for w in hidden_widths)
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    if not hidden_widths:
        raise ValueError("need at least one hidden layer")
    if min(hidden_widths) < 1:
        raise ValueError("layer widths must be positive")
    rng = np.random.default_rng(seed)
    dims = (int(input_dim),) + hidden_widths + (1,)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.random((fan_out, fan_in), dtype=dtype)
        w *= 2 * limit
        w -= limit
        layers.append(DenseLayer(w, np.zeros(fan_out, dtype=dtype)))
    return ModelParams(layers)


def layer_param_counts(model: ModelParams) -> list[int]:
    return [(l.in_dim + 1) * l.out_dim for l in model.layers]


def count_params(model: ModelParams) -> int:
    return sum(layer_param_counts(model))


# --- forward / loss / backward ---------------------------------------------


def as_input(batch, dimension: int, dtype=np.float64):
    """Coerce a batch into something ``@``-compatible with shape (n, dimension)."""
    if isinstance(batch, Dataset):
        batch = batch.vectors
    if sp.issparse(batch):
        x = sp.csr_matrix(batch, dtype=dtype)
    elif isinstance(batch, np.ndarray):
        x = np.atleast_2d(batch).astype(dtype, copy=False)
    else:
        batch = list(batch)
        if any(not isinstance(v, FeatureVector) for v in batch):
            raise TypeError("batch must be FeatureVectors, a CSR matrix or a dense array")
        if any(v.dimension != dimension for v in batch):
            raise ValueError(f"feature vector dimension does not match model input {dimension}")
        x = vectors_to_csr(batch, dimension, dtype=dtype)
    if x.shape[1] != dimension:
        raise ValueError(f"input has {x.shape[1]} columns, model expects {dimension}")
    return x


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep strictly inside (0, 1) even when the logit saturates
    lo = np.nextafter(z.dtype.type(0), z.dtype.type(1))
    hi = np.nextafter(z.dtype.type(1), z.dtype.type(0))
    return np.clip(out, lo, hi)


def forward(model: ModelParams, batch):
    x = as_input(batch, model.input_dim, model.dtype)
    pre, post = [], [x]
    a = x
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = a @ layer.weights.T
        z = np.asarray(z) + layer.bias
        pre.append(z)
        a = np.maximum(z, 0) if i < last else z
        if i < last:
            post.append(a)
    probs = _sigmoid(pre[-1][:, 0])
    return probs, {"pre": pre, "post": post, "probs": probs}


def bce_loss(probabilities, labels, eps: float = BCE_EPS) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    p = np.clip(p, eps, 1 - eps)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))


def backward(model: ModelParams, cache, labels) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of the mean BCE loss as ``[(dW, db), ...]`` per layer."""
    pre, post, probs = cache["pre"], cache["post"], cache["probs"]
    y = np.asarray(labels, dtype=probs.dtype).reshape(-1)
    if len(pre) != len(model.layers) or y.shape != probs.shape:
        raise ValueError("cache does not belong to this model/batch")
    n = len(y)
    delta = ((probs - y) / n)[:, None]
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        a = post[i]
        if sp.issparse(a):
            dw = np.asarray((a.T @ delta).T)
        else:
            dw = delta.T @ a
        grads[i] = (dw, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.layers[i].weights) * (pre[i - 1] > 0)
    return grads


# --- optimizer -------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    decay: float = 1e-6
    batch_size: int = 2048
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class OptimizerState:
    velocity: list[tuple[np.ndarray, np.ndarray]]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, model: ModelParams) -> "OptimizerState":
        return cls([(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers])


def effective_lr(config: TrainConfig, step: int) -> float:
    return config.learning_rate / (1.0 + config.decay * step)


def sgd_nesterov_step(model: ModelParams, gradients, state: OptimizerState, config: TrainConfig):
    """One in-place update: ``v <- mu v - lr g;  theta <- theta + mu v - lr g``."""
    if len(gradients) != len(model.layers):
        raise ValueError("gradient list does not match model")
    for (gw, gb), layer in zip(gradients, model.layers):
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ValueError("gradient shape mismatch")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise FloatingPointError(f"non-finite gradient at step {state.step_count}")
    lr = effective_lr(config, state.step_count)
    mu = config.momentum
    for (gw, gb), (vw, vb), layer in zip(gradients, state.velocity, model.layers):
        for theta, v, g in ((layer.weights, vw, gw), (layer.bias, vb, gb)):
            v *= mu
            v -= lr * g
            theta += mu * v - lr * g
    state.step_count += 1
    return model, state


# --- training --------------------------------------------------------------


class PlainBatches:
    """Reshuffle the training rows each epoch and cut them into batches."""

    def __init__(self, data: Dataset, batch_size: int, seed: int = 0):
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        self.data = data
        self.batch_size = batch_size
        self.seed = seed
        self._x = data.to_csr()

    def batches(self, epoch: int) -> Iterator[tuple[sp.csr_matrix, np.ndarray]]:
        order = np.random.default_rng([self.seed, epoch]).permutation(len(self.data))
        for start in range(0, len(order), self.batch_size):
            rows = order[start : start + self.batch_size]
            yield self._x[rows], self.data.labels[rows]


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)  # percent
    val_loss: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def predict_proba(model: ModelParams, data, chunk: int = 4096) -> np.ndarray:
    if isinstance(data, Dataset):
        if data.dimension != model.input_dim:
            raise ValueError(f"dataset dimension {data.dimension} != model input {model.input_dim}")
        x = data.to_csr().astype(model.dtype)
    else:
        x = as_input(data, model.input_dim, model.dtype)
    parts = [forward(model, x[i : i + chunk])[0] for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros(0)


def predict(model: ModelParams, data, threshold: float = 0.5) -> np.ndarray:
    """1 (malicious) where the probability is strictly above ``threshold``."""
    return (predict_proba(model, data) > threshold).astype(np.int8)


def train(
    model: ModelParams,
    train_data: Dataset,
    config: TrainConfig,
    validation: Optional[Dataset] = None,
    batch_source=None,
):
    """Train a copy of ``model``; returns ``(trained, history)``.

    ``batch_source`` must expose ``batches(epoch)`` yielding ``(x, labels)``;
    by default the clean training rows are reshuffled every epoch.  Validation
    rows are always evaluated as given.
    """
    for d in (train_data, validation):
        if d is not None and d.dimension != model.input_dim:
            raise ValueError(f"dataset dimension {d.dimension} != model input {model.input_dim}")
    model = model.copy()
    history = History()
    if config.epochs == 0:
        return model, history
    if batch_source is None:
        batch_source = PlainBatches(train_data, config.batch_size, config.seed)
    state = OptimizerState.zeros_like(model)
    for epoch in range(config.epochs):
        total, seen = 0.0, 0
        for x, y in batch_source.batches(epoch):
            probs, cache = forward(model, x)
            total += bce_loss(probs, y) * len(y)
            seen += len(y)
            sgd_nesterov_step(model, backward(model, cache, y), state, config)
        history.train_loss.append(total / max(seen, 1))
        if validation is not None and len(validation):
            p = predict_proba(model, validation)
            history.val_loss.append(bce_loss(p, validation.labels))
            history.val_accuracy.append(100.0 * float(np.mean((p > 0.5) == validation.labels)))
            log.info(
                "epoch %d/%d loss %.4f val_loss %.4f val_acc %.2f",
                epoch + 1, config.epochs, history.train_loss[-1], history.val_loss[-1], history.val_accuracy[-1],
            )
        else:
            log.info("epoch %d/%d loss %.4f", epoch + 1, config.epochs, history.train_loss[-1])
    if not model.all_finite():
        raise FloatingPointError("training produced non-finite parameters")
    return model, history


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(model: ModelParams, path, fmt: str = "f32le") -> None:
    """Header JSON line, then all weight matrices and then all bias vectors, layer by layer."""
    header = {"input_dim": model.input_dim, "hidden": list(model.hidden), "format": fmt}
    if fmt == "json":
        header["layers"] = [{"weights": l.weights.tolist(), "bias": l.bias.tolist()} for l in model.layers]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header) + "\n")
        return
    if fmt != "f32le":
        raise ValueError(f"unknown checkpoint format {fmt!r}")
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for layer in model.layers:
            fh.write(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        for layer in model.layers:
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float64) -> ModelParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    dims = [int(header["input_dim"])] + [int(h) for h in header["hidden"]] + [1]
    fmt = header.get("format", "f32le")
    if fmt == "json":
        layers = [
            DenseLayer(np.asarray(l["weights"], dtype=dtype).reshape(o, i), np.asarray(l["bias"], dtype=dtype))
            for l, i, o in zip(header["layers"], dims, dims[1:])
        ]
        return ModelParams(layers)
    if fmt != "f32le":
        raise ValueError(f"unknown checkpoint format {fmt!r}")
    flat = np.frombuffer(payload, dtype="<f4")
    n_w = sum(i * o for i, o in zip(dims, dims[1:]))
    if flat.size != n_w + sum(dims[1:]):
        raise ValueError(f"checkpoint payload has {flat.size} floats, expected {n_w + sum(dims[1:])}")
    weights, off = [], 0
    for i, o in zip(dims, dims[1:]):
        weights.append(flat[off : off + i * o].reshape(o, i).astype(dtype))
        off += i * o
    layers = []
    for w, o in zip(weights, dims[1:]):
        layers.append(DenseLayer(w, flat[off : off + o].astype(dtype)))
        off += o
    return ModelParams(layers)
