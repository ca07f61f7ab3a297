"""Surrogate-driven inverse design: bulk evaluation, Pareto fronts and range queries."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import STREAM_DESIGN, DatasetConfig, draw_n_free, sample_seed
from .errors import EmptyRange, GenerationFailed
from .gnn import GnnModel, build_graph_sample
from .lattice import GenConfig, Lattice, generate_lattice
from .mechanics import ModelKind, lattice_volume, solve_lattice

MPA = 1e6


@dataclass(frozen=True)
class DesignPoint:
    id: int
    seed: int
    n_free: int
    volume: float  # m^3
    predicted_modulus: float  # Pa

    def __post_init__(self):
        if not self.volume > 0:
            raise ValueError("volume must be positive")
        if not math.isfinite(self.predicted_modulus):
            raise ValueError("prediction must be finite")

    @property
    def inv_volume(self) -> float:
        return 1.0 / self.volume


def design_lattice(config: DatasetConfig, seed: int, n_free: int) -> Lattice:
    """Regenerate a design lattice from its recorded seed."""
    return generate_lattice(GenConfig(n_free, config.epsilon, seed, config.domain_edge),
                            config.section, config.material)


def _design_sample(config: DatasetConfig, index: int, max_attempts: int = 64):
    for attempt in range(max_attempts):
        seed = sample_seed(config.seed, config.stream, index, attempt)
        n_free = draw_n_free(seed, config.n_free_min, config.n_free_max)
        try:
            return seed, n_free, design_lattice(config, seed, n_free)
        except GenerationFailed:
            continue
    raise GenerationFailed(f"design sample {index}: no valid lattice after {max_attempts} attempts")


def _design_job(args):
    config, index = args
    return _design_sample(config, index)


def bulk_predict(model: GnnModel, n: int, config: DatasetConfig | None = None, batch_size: int = 256,
                 seed: int = 0, workers: int = 1) -> list[DesignPoint]:
    """Generate ``n`` fresh lattices and score them with the surrogate (no ground-truth solve).

    Lattice ``i`` depends only on (seed, stream, i), so results do not depend on ``workers``.
    """
    if config is None:
        config = DatasetConfig(n=max(n, 1), seed=seed, stream=STREAM_DESIGN)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    points: list[DesignPoint] = []
    try:
        for start in range(0, n, batch_size):
            jobs = [(config, i) for i in range(start, min(n, start + batch_size))]
            chunk = list(pool.map(_design_job, jobs)) if pool else [_design_job(j) for j in jobs]
            preds = model.predict([build_graph_sample(lat) for _, _, lat in chunk])
            for i, ((s, n_free, lat), pred) in enumerate(zip(chunk, preds)):
                points.append(DesignPoint(start + i, s, n_free, lattice_volume(lat), float(pred)))
    finally:
        if pool:
            pool.shutdown()
    return points


def pareto_front(points: Sequence[DesignPoint]) -> list[DesignPoint]:
    """Members not dominated in (inv_volume, predicted_modulus), both maximized; sorted by modulus."""
    if not points:
        return []
    iv = np.array([p.inv_volume for p in points])
    e = np.array([p.predicted_modulus for p in points])
    order = np.lexsort((-e, -iv))  # inv_volume descending, then modulus descending
    keep = []
    best_prev = -math.inf  # best modulus among strictly larger inv_volume
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and iv[order[j]] == iv[order[i]]:
            j += 1
        group = order[i:j]
        top = e[group[0]]
        for k in group:
            if e[k] == top and e[k] > best_prev:
                keep.append(k)
        best_prev = max(best_prev, top)
        i = j
    front = [points[k] for k in keep]
    return sorted(front, key=lambda p: (p.predicted_modulus, -p.inv_volume, p.id))


def dominated_by_any(p: DesignPoint, points: Sequence[DesignPoint]) -> bool:
    """Brute-force dominance test, used to audit fronts."""
    for q in points:
        if (q.inv_volume >= p.inv_volume and q.predicted_modulus >= p.predicted_modulus
                and (q.inv_volume > p.inv_volume or q.predicted_modulus > p.predicted_modulus)):
            return True
    return False


@dataclass
class QueryResult:
    best: DesignPoint
    local_front: list[DesignPoint]
    n_in_band: int


def local_query(points: Sequence[DesignPoint], e_min: float, e_max: float) -> QueryResult:
    """Lightest in-band design; ties go to higher modulus, then lower id."""
    if not e_min < e_max:
        raise ValueError("need e_min < e_max")
    band = [p for p in points if e_min <= p.predicted_modulus <= e_max]
    if not band:
        nearest = None
        if points:
            mid = 0.5 * (e_min + e_max)
            closest = min(points, key=lambda p: (abs(p.predicted_modulus - mid), p.id))
            half = 0.5 * (e_max - e_min)
            nearest = (closest.predicted_modulus - half, closest.predicted_modulus + half)
        raise EmptyRange(f"no design in [{e_min:.6g}, {e_max:.6g}] Pa", nearest=nearest)
    best = min(band, key=lambda p: (-p.inv_volume, -p.predicted_modulus, p.id))
    return QueryResult(best, pareto_front(band), len(band))


def validate_candidate(point: DesignPoint, kind: ModelKind | str, config: DatasetConfig) -> tuple[float, float]:
    """Ground-truth modulus and |prediction - truth| / truth."""
    lat = design_lattice(config, point.seed, point.n_free)
    truth = solve_lattice(lat, kind).e_eff
    return truth, abs(point.predicted_modulus - truth) / abs(truth)


def write_design_csv(path: str | Path, points: Sequence[DesignPoint], front: Sequence[DesignPoint]) -> None:
    on_front = {p.id for p in front}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "seed", "volume_m3", "inv_volume", "e_pred_MPa", "on_front"])
        for p in points:
            w.writerow([p.id, p.seed, repr(p.volume), repr(p.inv_volume),
                        repr(p.predicted_modulus / MPA), int(p.id in on_front)])
