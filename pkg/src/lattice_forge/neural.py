"""Dense layers, scalers, metrics, Nadam and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .errors import DegenerateTarget, DimensionMismatch, NonFiniteLoss

log = logging.getLogger(__name__)

ACTIVATIONS = ("selu", "prelu", "linear")


def activation(kind: str, x, slope=None):
    """Elementwise numpy activation."""
    x = np.asarray(x, dtype=float)
    if kind == "selu":
        return np.where(
            x > 0,
            ad.SELU_LAMBDA * x,
            ad.SELU_LAMBDA * ad.SELU_ALPHA * (np.exp(np.minimum(x, 0.0)) - 1.0),
        )
    if kind == "prelu":
        if slope is None:
            raise ValueError("prelu needs a slope")
        return np.where(x > 0, x, slope * x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"
    slope: np.ndarray | None = None  # prelu, one per unit

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        limit = math.sqrt(3.0 / n_in)
        W = rng.uniform(-limit, limit, size=(n_out, n_in))
        slope = np.full(n_out, 0.25) if activation == "prelu" else None
        return cls(W, np.zeros(n_out), activation, slope)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        p = {f"{prefix}.W": self.weights, f"{prefix}.b": self.bias}
        if self.slope is not None:
            p[f"{prefix}.a"] = self.slope
        return p

    def n_params(self) -> int:
        return sum(v.size for v in self.params("").values())

    def apply(self, x: ad.Var, p: dict[str, ad.Var], prefix: str) -> ad.Var:
        if x.value.shape[-1] != self.n_in:
            raise DimensionMismatch(f"{prefix}: expected {self.n_in} inputs, got {x.value.shape[-1]}")
        z = ad.linear(x, p[f"{prefix}.W"], p[f"{prefix}.b"])
        if self.activation == "selu":
            return ad.selu(z)
        if self.activation == "prelu":
            return ad.prelu(z, p[f"{prefix}.a"])
        return z

    def to_dict(self) -> dict:
        d = {"weights": self.weights.tolist(), "bias": self.bias.tolist(), "activation": self.activation}
        if self.slope is not None:
            d["slope"] = self.slope.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenseLayer":
        slope = np.asarray(d["slope"], dtype=float) if "slope" in d else None
        return cls(np.asarray(d["weights"], dtype=float), np.asarray(d["bias"], dtype=float), d["activation"], slope)


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.n_in:
        raise DimensionMismatch(f"expected {layer.n_in} inputs, got {x.shape[-1]}")
    return activation(layer.activation, x @ layer.weights.T + layer.bias, layer.slope)


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float).ravel(), np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise DimensionMismatch(f"length mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def r2_score(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float).ravel(), np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise DimensionMismatch(f"length mismatch {pred.shape} vs {target.shape}")
    if target.size < 2:
        raise DegenerateTarget("need at least 2 samples")
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot / target.size < 1e-15:
        raise DegenerateTarget("target variance is ~0")
    return 1.0 - float(np.sum((target - pred) ** 2)) / ss_tot


@dataclass
class StandardScaler:
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def fit(self, x) -> "StandardScaler":
        x = np.asarray(x, dtype=float)
        self.mean = x.mean(axis=0)
        self.std = np.maximum(x.std(axis=0), 1e-12)
        return self

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_transform(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": np.asarray(self.mean).tolist(), "std": np.asarray(self.std).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardScaler":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


# --- optimizer ---------------------------------------------------------------

@dataclass
class NadamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def nadam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: NadamState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Nesterov-Adam update, applied to ``params`` in place."""
    state.t += 1
    t = state.t
    c1_next = 1.0 - beta1 ** (t + 1)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = beta1 * m / c1_next + (1.0 - beta1) * g / c1
        v_hat = v / c2
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# --- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_size: int | None = 128  # None: full batch
    loss: str = "mse"
    val_split: float = 0.15
    plateau_factor: float = 0.5
    plateau_patience: int = 50
    early_stop_patience: int = 200
    min_delta: float = 1e-4  # relative improvement on the validation loss
    min_lr: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.val_split < 1.0:
            raise ValueError("val_split must lie in [0, 1)")
        if self.loss != "mse":
            raise ValueError("only the MSE loss is supported")

    def to_dict(self) -> dict:
        return asdict(self)


class Model(Protocol):
    def parameters(self) -> dict[str, np.ndarray]: ...

    def loss(self, p: dict[str, ad.Var], batch) -> ad.Var: ...


class Dataset(Protocol):
    def __len__(self) -> int: ...

    def batch(self, idx: np.ndarray): ...


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, **row) -> None:
        self.rows.append(row)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "train_loss", "val_loss"])
            for r in self.rows:
                w.writerow([r["epoch"], repr(r["lr"]), repr(r["train_loss"]), repr(r["val_loss"])])


def loss_value(model: Model, data: Dataset, idx: np.ndarray | None = None) -> float:
    if idx is None:
        idx = np.arange(len(data))
    p = {k: ad.Var(v) for k, v in model.parameters().items()}
    return float(model.loss(p, data.batch(idx)).value)


def fit(model: Model, train: Dataset, val: Dataset | None, config: TrainConfig,
        progress: int = 0) -> History:
    """Mini-batch Nadam with plateau LR halving, early stopping and best-weight restore."""
    ad.tune_allocator()
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = NadamState()
    lr = config.learning_rate
    history = History()
    n = len(train)
    bs = n if config.batch_size is None else min(config.batch_size, n)
    best = math.inf
    best_params = {k: v.copy() for k, v in params.items()}
    plateau_wait = stop_wait = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            tape = ad.Tape()
            leaves = {k: tape.param(v) for k, v in params.items()}
            loss = model.loss(leaves, train.batch(idx))
            value = float(loss.value)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss={value} at epoch {epoch}, batch starting {start}, lr={lr}")
            tape.backward(loss)
            nadam_step(params, {k: v.grad for k, v in leaves.items()}, state, lr)
            total += value * len(idx)
        train_loss = total / n
        val_loss = loss_value(model, val) if val is not None and len(val) else train_loss
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"validation loss={val_loss} at epoch {epoch}")
        history.append(epoch=epoch, lr=lr, train_loss=train_loss, val_loss=val_loss)
        if progress and epoch % progress == 0:
            log.info("epoch %d lr %.2e train %.4e val %.4e", epoch, lr, train_loss, val_loss)
        if val_loss < best - config.min_delta * abs(best) or not math.isfinite(best):
            best = val_loss
            history.best_epoch = epoch
            for k, v in params.items():
                best_params[k][...] = v
            plateau_wait = stop_wait = 0
        else:
            plateau_wait += 1
            stop_wait += 1
            if plateau_wait >= config.plateau_patience:
                lr = max(lr * config.plateau_factor, min(lr, config.min_lr))
                plateau_wait = 0
            if stop_wait >= config.early_stop_patience:
                history.stopped_early = True
                break
    for k, v in params.items():
        v[...] = best_params[k]
    return history


# --- dense regressor ---------------------------------------------------------

class DenseData:
    """Scaled feature/target arrays."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()

    def __len__(self):
        return len(self.y)

    def batch(self, idx):
        return self.x[idx], self.y[idx]


class MLP:
    """Fully connected regressor with feature/target standardization."""

    def __init__(self, layers: list[DenseLayer], x_scaler: StandardScaler | None = None,
                 y_scaler: StandardScaler | None = None):
        self.layers = layers
        self.x_scaler = x_scaler or StandardScaler()
        self.y_scaler = y_scaler or StandardScaler()

    @classmethod
    def build(cls, sizes: list[int], activations: list[str], seed: int = 0) -> "MLP":
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = np.random.default_rng(seed)
        return cls([DenseLayer.init(a, b, act, rng) for a, b, act in zip(sizes[:-1], sizes[1:], activations)])

    def parameters(self) -> dict[str, np.ndarray]:
        p = {}
        for i, layer in enumerate(self.layers):
            p.update(layer.params(f"dense{i}"))
        return p

    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def forward(self, p: dict[str, ad.Var], x: np.ndarray) -> ad.Var:
        h = ad.Var(x)
        for i, layer in enumerate(self.layers):
            h = layer.apply(h, p, f"dense{i}")
        return h

    def loss(self, p, batch) -> ad.Var:
        x, y = batch
        return ad.mse(self.forward(p, x), y)

    def predict_scaled(self, x_scaled: np.ndarray) -> np.ndarray:
        h = np.asarray(x_scaled, dtype=float)
        for layer in self.layers:
            h = dense_forward(layer, h)
        return h.ravel()

    def predict(self, x) -> np.ndarray:
        z = self.predict_scaled(self.x_scaler.transform(x))
        return self.y_scaler.inverse_transform(z[:, None]).ravel()

    def architecture(self) -> list[dict]:
        return [{"in": l.n_in, "out": l.n_out, "activation": l.activation} for l in self.layers]

    def to_dict(self) -> dict:
        return {
            "type": "mlp",
            "layers": [l.to_dict() for l in self.layers],
            "x_scaler": self.x_scaler.to_dict(),
            "y_scaler": self.y_scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        return cls([DenseLayer.from_dict(l) for l in d["layers"]],
                   StandardScaler.from_dict(d["x_scaler"]), StandardScaler.from_dict(d["y_scaler"]))
