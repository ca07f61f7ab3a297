"""Slice-based effective-area features and the spring-series reference stiffness."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lattice import Lattice

AXES = {"x": 0, "y": 1, "z": 2}
AREA_FLOOR = 1e-12


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        return AXES[axis]
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be x, y, z or 0..2, got {axis!r}")
    return int(axis)


def slice_planes(n_s: int, L: float = 1.0) -> np.ndarray:
    """Equally spaced interior offsets s*L/(n_s+1), s = 1..n_s."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    return np.arange(1, n_s + 1) * L / (n_s + 1)


@dataclass(frozen=True)
class SlicePlan:
    n_s: int = 19
    L: float = 1.0

    @property
    def positions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = slice_planes(self.n_s, self.L)
        return (p, p, p)


@dataclass
class SliceFeatures:
    eff_areas: np.ndarray  # (3, n_s), rows x, y, z
    inv_features: np.ndarray  # (3 * n_s,), x block then y then z
    zero_area: bool


def _straddle(lattice: Lattice, axis: int, offsets: np.ndarray) -> np.ndarray:
    """(n_edges, n_offsets) mask of elements whose endpoints strictly straddle the plane."""
    c0 = lattice.nodes[lattice.edges[:, 0], axis][:, None]
    c1 = lattice.nodes[lattice.edges[:, 1], axis][:, None]
    return (c0 - offsets[None, :]) * (c1 - offsets[None, :]) < 0


def direction_cosines_sq(lattice: Lattice) -> np.ndarray:
    vec = lattice.edge_vectors()
    return vec**2 / np.sum(vec**2, axis=1, keepdims=True)


def intersected_elements(lattice: Lattice, axis, offset: float) -> np.ndarray:
    ax = _axis_index(axis)
    return np.flatnonzero(_straddle(lattice, ax, np.array([float(offset)]))[:, 0])


def effective_area(lattice: Lattice, axis, offset: float) -> float:
    """Sum of A_e cos^2(theta) over the bars crossing the plane."""
    ax = _axis_index(axis)
    idx = intersected_elements(lattice, ax, offset)
    if len(idx) == 0:
        return 0.0
    cos2 = direction_cosines_sq(lattice)[idx, ax]
    return float(np.sum(lattice.section.area * cos2))


def effective_areas(lattice: Lattice, axis, offsets: np.ndarray) -> np.ndarray:
    ax = _axis_index(axis)
    if lattice.n_edges == 0:
        return np.zeros(len(offsets))
    mask = _straddle(lattice, ax, np.asarray(offsets, dtype=float))
    weights = lattice.section.area * direction_cosines_sq(lattice)[:, ax]
    return weights @ mask


def featurize(lattice: Lattice, plan: SlicePlan) -> SliceFeatures:
    areas = np.stack([effective_areas(lattice, ax, plan.positions[ax]) for ax in range(3)])
    zero = bool(np.any(areas < AREA_FLOOR))
    inv = 1.0 / np.maximum(areas, AREA_FLOOR)
    return SliceFeatures(areas, inv.ravel(), zero)


def spring_series_equivalent(values: Sequence[float]) -> float:
    """n / sum(1/k): equivalent stiffness of equal-length springs in series."""
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.any(v <= 0):
        raise ValueError("spring stiffnesses must be positive")
    return float(v.size / np.sum(1.0 / v))


def limit_analysis(
    lattices: Iterable[Lattice],
    candidates: Sequence[int] = (9, 19, 49, 99),
    young_modulus: float | None = None,
) -> dict[int, np.ndarray]:
    """(EA)_{z,eq} per lattice for each candidate slice count."""
    lattices = list(lattices)
    out: dict[int, np.ndarray] = {}
    for n_s in candidates:
        vals = []
        for lat in lattices:
            E = lat.material.young_modulus if young_modulus is None else young_modulus
            areas = effective_areas(lat, 2, slice_planes(n_s, lat.domain_edge))
            vals.append(spring_series_equivalent(E * np.maximum(areas, AREA_FLOOR)))
        out[int(n_s)] = np.asarray(vals)
    return out


def histogram_rows(values: dict[int, np.ndarray], bins: int = 30) -> list[tuple[int, float, float, int]]:
    """Shared-bin histograms, one block of rows per slice count."""
    if not values:
        return []
    pooled = np.concatenate([v for v in values.values()])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    rows = []
    for n_s, v in values.items():
        counts, _ = np.histogram(v, bins=edges)
        rows.extend((n_s, float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts))
    return rows


def write_histogram_csv(path: str | Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_s", "bin_left", "bin_right", "count"])
        for r in rows:
            w.writerow([r[0], repr(r[1]), repr(r[2]), r[3]])
