"""Experiment drivers: spring-series toy, slice-feature DNN and the graph network.

Each driver has a desk-scale default and a ``full_scale()`` constructor with the
full sample and epoch counts.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import SampleRecord, attach_slice_features, split, trainable
from .gnn import GnnModel, GraphData, build_graph_sample
from .neural import MLP, DenseData, History, StandardScaler, TrainConfig, fit, mse, r2_score
from .slicing import SlicePlan

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    model: MLP | GnnModel
    history: History
    metrics: dict
    predictions: dict[str, tuple[np.ndarray, np.ndarray]]  # split -> (truth, prediction), physical units

    def write_predictions(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "truth", "prediction"])
            for name, (truth, pred) in self.predictions.items():
                for t, p in zip(truth, pred):
                    w.writerow([name, repr(float(t)), repr(float(p))])


def dense_sizes(n_in: int) -> list[int]:
    """in -> in -> 5 in -> 1."""
    return [n_in, n_in, 5 * n_in, 1]


DENSE_ACTIVATIONS = ["selu", "selu", "linear"]


def _dense_metrics(model: MLP, x: np.ndarray, y: np.ndarray, parts: dict[str, np.ndarray]):
    metrics, preds = {}, {}
    for name, idx in parts.items():
        if len(idx) == 0:
            continue
        pred = model.predict(x[idx])
        truth = y[idx]
        preds[name] = (truth, pred)
        scaled = model.y_scaler.transform(pred[:, None]).ravel()
        metrics[f"loss_{name}"] = mse(scaled, model.y_scaler.transform(truth[:, None]).ravel())
        metrics[f"r2_{name}"] = r2_score(pred, truth) if len(idx) > 1 else float("nan")
    return metrics, preds


def _train_dense(x: np.ndarray, y: np.ndarray, parts: dict[str, np.ndarray], train_cfg: TrainConfig,
                 seed: int, progress: int = 0) -> ExperimentResult:
    tr, va = parts["train"], parts["val"]
    model = MLP.build(dense_sizes(x.shape[1]), DENSE_ACTIVATIONS, seed=seed)
    model.x_scaler = StandardScaler().fit(x[tr])
    model.y_scaler = StandardScaler().fit(y[tr, None])

    def view(idx):
        return DenseData(model.x_scaler.transform(x[idx]), model.y_scaler.transform(y[idx, None]).ravel())

    history = fit(model, view(tr), view(va), train_cfg, progress=progress)
    metrics, preds = _dense_metrics(model, x, y, parts)
    metrics.update(n_params=model.n_params(), epochs_run=len(history.rows), best_epoch=history.best_epoch)
    return ExperimentResult(model, history, metrics, preds)


# --- spring-series toy ---------------------------------------------------------

@dataclass
class ToyConfig:
    n_samples: int = 50_000
    n_springs: int = 19
    low: float = 10.0
    high: float = 100.0
    test_frac: float = 0.15
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3, epochs=500, batch_size=128))

    @classmethod
    def full_scale(cls, seed: int = 0) -> "ToyConfig":
        return cls(n_samples=20_000 * 19, seed=seed,
                   train=TrainConfig(learning_rate=1e-3, epochs=2000, batch_size=128, seed=seed))

    def to_dict(self) -> dict:
        return asdict(self)


def toy_dataset(n: int, n_springs: int = 19, low: float = 10.0, high: float = 100.0, seed: int = 0):
    """Inputs 1/(EA)_e for ``n_springs`` springs in series, target (EA)_eq."""
    rng = np.random.default_rng(seed)
    ea = rng.uniform(low, high, size=(n, n_springs))
    inv = 1.0 / ea
    return inv, n_springs / inv.sum(axis=1)


def run_toy(config: ToyConfig, progress: int = 0) -> ExperimentResult:
    x, y = toy_dataset(config.n_samples, config.n_springs, config.low, config.high, config.seed)
    parts = split(len(y), config.train.val_split, config.test_frac, config.seed)
    res = _train_dense(x, y, parts, replace(config.train, seed=config.seed), config.seed, progress)
    lo, hi = y[parts["train"]].min(), y[parts["train"]].max()
    pred = res.predictions["test"][1]
    margin = 0.1 * (hi - lo)
    res.metrics["pred_in_range"] = bool(np.all((pred >= lo - margin) & (pred <= hi + margin)))
    return res


# --- slice-feature DNN ----------------------------------------------------------

@dataclass
class SliceConfig:
    n_s: int = 19
    test_frac: float = 0.15
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3, epochs=2000, batch_size=128))

    @classmethod
    def full_scale(cls, seed: int = 0) -> "SliceConfig":
        return cls(seed=seed, train=TrainConfig(learning_rate=1e-3, epochs=2000, batch_size=128, seed=seed))

    def to_dict(self) -> dict:
        return asdict(self)


def slice_arrays(records: list[SampleRecord], n_s: int) -> tuple[np.ndarray, np.ndarray, list[SampleRecord]]:
    """Feature matrix (inverse areas), normalized target E/V, and the records kept."""
    plan = SlicePlan(n_s=n_s, L=records[0].domain_edge if records else 1.0)
    recs = trainable(attach_slice_features(records, plan))
    x = np.array([r.slice_inv for r in recs])
    y = np.array([r.target_per_volume for r in recs])
    return x, y, recs


def run_slice_dnn(records: list[SampleRecord], config: SliceConfig, progress: int = 0) -> ExperimentResult:
    x, y, recs = slice_arrays(records, config.n_s)
    parts = split(len(y), config.train.val_split, config.test_frac, config.seed)
    res = _train_dense(x, y, parts, replace(config.train, seed=config.seed), config.seed, progress)
    res.metrics["n_records"] = len(recs)
    res.metrics["n_zero_area"] = len(records) - len(recs)
    return res


# --- graph network --------------------------------------------------------------

@dataclass
class GnnConfig:
    kind: str = "truss"
    n_train: int = 4000
    n_val: int = 600
    n_test: int = 400  # hidden test, generated from its own seed stream
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-2, epochs=2000, batch_size=32))

    @classmethod
    def full_scale(cls, kind: str = "truss", seed: int = 0) -> "GnnConfig":
        tc = TrainConfig(learning_rate=1e-2, epochs=10_000, batch_size=32, seed=seed)
        if kind == "beam":
            return cls("beam", n_train=7650, n_val=1350, n_test=1000, seed=seed, train=tc)
        return cls("truss", n_train=17_000, n_val=3000, n_test=2000, seed=seed, train=tc)

    def to_dict(self) -> dict:
        return asdict(self)


def run_gnn(records: list[SampleRecord], test_records: list[SampleRecord], config: GnnConfig,
            progress: int = 0) -> ExperimentResult:
    """Train on ``records`` (split into train/val) and score on the separately generated test set."""
    samples = [build_graph_sample(r.lattice, r.label) for r in records]
    test = [build_graph_sample(r.lattice, r.label) for r in test_records]
    val_frac = config.n_val / len(samples) if samples else 0.0
    parts = split(len(samples), val_frac, 0.0, config.seed)
    model = GnnModel.init(config.seed)
    train_s = [samples[i] for i in parts["train"]]
    val_s = [samples[i] for i in parts["val"]]
    model.fit_scalers(train_s)
    history = fit(model, GraphData(model, train_s), GraphData(model, val_s),
                  replace(config.train, seed=config.seed), progress=progress)
    metrics, preds = {}, {}
    for name, group in (("train", train_s), ("val", val_s), ("test", test)):
        if not group:
            continue
        truth = np.array([s.target for s in group])
        pred = model.predict(group)
        preds[name] = (truth, pred)
        metrics[f"loss_{name}"] = mse(model.y_scaler.transform(pred[:, None]), model.y_scaler.transform(truth[:, None]))
        metrics[f"r2_{name}"] = r2_score(pred, truth) if len(group) > 1 else float("nan")
    metrics.update(n_params=model.n_params(), epochs_run=len(history.rows), best_epoch=history.best_epoch)
    return ExperimentResult(model, history, metrics, preds)
