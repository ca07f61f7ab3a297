"""JSON checkpoints: architecture, parameters, scalers, training config, seed and metrics."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import SchemaMismatch
from .gnn import GnnModel
from .neural import MLP

FORMAT = "lattice-forge-model/1"


def save(path: str | Path, model: GnnModel | MLP, *, experiment: str, train_config: dict,
         seed: int, metrics: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    doc = {
        "format": FORMAT,
        "experiment": experiment,
        "seed": seed,
        "n_params": model.n_params(),
        "architecture": model.architecture(),
        "train_config": train_config,
        "metrics": metrics or {},
        "model": model.to_dict(),
    }
    if extra:
        doc["extra"] = extra
    path.write_text(json.dumps(doc, sort_keys=True, allow_nan=False) + "\n")
    return path


def load(path: str | Path) -> tuple[GnnModel | MLP, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise SchemaMismatch(f"unsupported checkpoint format {doc.get('format')!r}")
    body = doc["model"]
    if body["type"] == "gnn":
        model = GnnModel.from_dict(body)
    elif body["type"] == "mlp":
        model = MLP.from_dict(body)
    else:
        raise SchemaMismatch(f"unknown model type {body['type']!r}")
    return model, doc
