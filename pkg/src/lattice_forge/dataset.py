"""Seeded lattice dataset generation, labeling, splitting and JSONL persistence."""

from __future__ import annotations

import gzip
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    CorruptRecord,
    GenerationFailed,
    SchemaMismatch,
    SingularSystem,
)
from .lattice import GenConfig, Lattice, MaterialSpec, SectionSpec, derive_seed, generate_lattice
from .mechanics import ModelKind, lattice_volume, solve_lattice
from .slicing import SlicePlan, featurize

log = logging.getLogger(__name__)

SCHEMA = "lattice-forge/1"
HEADER = {"schema": SCHEMA, "units": "SI"}

# independent seed streams derived from one global seed
STREAM_TRAIN = 0
STREAM_HIDDEN_TEST = 1
STREAM_DESIGN = 2

MAX_ATTEMPTS = 64


@dataclass(frozen=True)
class DatasetConfig:
    n: int
    kind: ModelKind = ModelKind.TRUSS
    seed: int = 0
    stream: int = STREAM_TRAIN
    n_free_min: int = 1
    n_free_max: int = 50
    radius: float = 5e-3
    young_modulus: float = 193e9
    poisson_ratio: float = 0.3
    epsilon: float = 0.05
    domain_edge: float = 1.0
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.n_free_min <= self.n_free_max:
            raise ValueError("need 0 <= n_free_min <= n_free_max")

    @property
    def section(self) -> SectionSpec:
        return SectionSpec(self.radius)

    @property
    def material(self) -> MaterialSpec:
        return MaterialSpec(self.young_modulus, self.poisson_ratio)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass
class SampleRecord:
    id: int
    seed: int
    n_free: int
    nodes: np.ndarray
    edges: np.ndarray
    radius: float
    young_modulus: float
    poisson_ratio: float
    model_kind: str
    label: float | None  # E_z^eq, Pa
    volume: float
    domain_edge: float = 1.0
    epsilon: float = 0.05
    slice_inv: np.ndarray | None = None
    target_per_volume: float | None = None
    flags: dict = field(default_factory=dict)

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.nodes, self.edges, SectionSpec(self.radius),
                       MaterialSpec(self.young_modulus, self.poisson_ratio), self.domain_edge, self.seed)

    def to_json(self) -> dict:
        d = {
            "id": self.id, "seed": self.seed, "n_free": self.n_free,
            "nodes": self.nodes.tolist(), "edges": self.edges.tolist(),
            "radius": self.radius, "young_modulus": self.young_modulus, "poisson_ratio": self.poisson_ratio,
            "model_kind": self.model_kind, "label": self.label, "volume": self.volume,
            "domain_edge": self.domain_edge, "epsilon": self.epsilon, "flags": self.flags,
        }
        if self.slice_inv is not None:
            d["slice_inv"] = self.slice_inv.tolist()
            d["target_per_volume"] = self.target_per_volume
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SampleRecord":
        rec = cls(
            id=int(d["id"]), seed=int(d["seed"]), n_free=int(d["n_free"]),
            nodes=np.asarray(d["nodes"], dtype=float).reshape(-1, 3),
            edges=np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
            radius=float(d["radius"]), young_modulus=float(d["young_modulus"]),
            poisson_ratio=float(d["poisson_ratio"]), model_kind=str(d["model_kind"]),
            label=None if d["label"] is None else float(d["label"]), volume=float(d["volume"]),
            domain_edge=float(d.get("domain_edge", 1.0)), epsilon=float(d.get("epsilon", 0.05)),
            flags=dict(d.get("flags", {})),
        )
        if "slice_inv" in d:
            rec.slice_inv = np.asarray(d["slice_inv"], dtype=float)
            rec.target_per_volume = float(d["target_per_volume"])
        return rec

    def validate(self) -> None:
        n = len(self.nodes)
        if n != 8 + self.n_free:
            raise ValueError(f"expected {8 + self.n_free} nodes, got {n}")
        if not np.all(np.isfinite(self.nodes)):
            raise ValueError("non-finite node coordinates")
        if len(self.edges) == 0 or self.edges.min() < 0 or self.edges.max() >= n:
            raise ValueError("edge index out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValueError("self-loop edge")
        ModelKind.parse(self.model_kind)
        vol = lattice_volume(self.lattice)
        if abs(vol - self.volume) > 1e-12 * max(abs(vol), 1e-300):
            raise ValueError(f"volume {self.volume} does not match recomputed {vol}")
        if self.label is None or not math.isfinite(self.label):
            raise ValueError("kept record without a finite label")
        if self.slice_inv is not None:
            if self.target_per_volume is None or not math.isfinite(self.target_per_volume):
                raise ValueError("slice features without a normalized target")
            if abs(self.target_per_volume * self.volume - self.label) > 1e-12 * abs(self.label):
                raise ValueError("normalized target inconsistent with label and volume")


@dataclass
class Manifest:
    name: str
    requested: int = 0
    kept: int = 0
    discarded_singular: int = 0
    discarded_generation: int = 0
    flagged_zero_area: int = 0
    target: int = 0
    global_seed: int = 0
    stream: int = STREAM_TRAIN
    model_kind: str = "truss"
    splits: dict = field(default_factory=dict)
    scaler_location: str | None = None
    units: str = "SI: m, m^2, m^3, Pa"
    config: dict = field(default_factory=dict)

    @property
    def discarded(self) -> int:
        return self.discarded_singular + self.discarded_generation

    def check(self) -> None:
        if self.kept + self.discarded != self.requested:
            raise ValueError("manifest counts do not add up")

    def to_json(self) -> dict:
        d = asdict(self)
        d["discarded"] = self.discarded
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Manifest":
        d = dict(d)
        d.pop("discarded", None)
        return cls(**d)


def sample_seed(global_seed: int, stream: int, index: int, attempt: int) -> int:
    return derive_seed(global_seed, stream, index, attempt)


def draw_n_free(seed: int, lo: int, hi: int) -> int:
    """Joint count for a sample, drawn from a sub-stream so it does not reuse the node draws."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    return int(rng.integers(lo, hi + 1))


def _make_record(config: DatasetConfig, index: int) -> tuple[SampleRecord | None, list[str]]:
    """Generate and solve sample ``index``; returns the record and the discard reasons met on the way."""
    reasons = []
    for attempt in range(MAX_ATTEMPTS):
        seed = sample_seed(config.seed, config.stream, index, attempt)
        n_free = draw_n_free(seed, config.n_free_min, config.n_free_max)
        try:
            lat = generate_lattice(GenConfig(n_free, config.epsilon, seed, config.domain_edge),
                                   config.section, config.material)
            res = solve_lattice(lat, config.kind)
        except SingularSystem:
            reasons.append("singular")
            continue
        except GenerationFailed:
            reasons.append("generation")
            continue
        rec = SampleRecord(
            id=index, seed=seed, n_free=n_free, nodes=lat.nodes, edges=lat.edges,
            radius=config.radius, young_modulus=config.young_modulus, poisson_ratio=config.poisson_ratio,
            model_kind=config.kind.value, label=float(res.e_eff), volume=float(res.volume),
            domain_edge=config.domain_edge, epsilon=config.epsilon,
        )
        return rec, reasons
    return None, reasons


def _work(args):
    return _make_record(*args)


def default_workers() -> int:
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return os.cpu_count() or 1


def generate_labeled(config: DatasetConfig, workers: int = 1) -> tuple[list[SampleRecord], Manifest]:
    """Generate ``config.n`` solved records; singular samples are replaced by regenerations.

    Record content depends only on (seed, stream, index), never on ``workers``.
    """
    jobs = [(config, i) for i in range(config.n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_work, jobs, chunksize=max(1, config.n // (8 * workers))))
    else:
        results = [_work(j) for j in jobs]
    man = Manifest(name=config.name, target=config.n, global_seed=config.seed, stream=config.stream,
                   model_kind=config.kind.value, config=config.to_dict())
    records = []
    for rec, reasons in results:
        man.discarded_singular += reasons.count("singular")
        man.discarded_generation += reasons.count("generation")
        if rec is None:
            log.warning("sample dropped after %d attempts", MAX_ATTEMPTS)
            continue
        records.append(rec)
    man.kept = len(records)
    man.requested = man.kept + man.discarded
    man.check()
    return records, man


def attach_slice_features(records: Iterable[SampleRecord], plan: SlicePlan) -> list[SampleRecord]:
    out = []
    for rec in records:
        feats = featurize(rec.lattice, plan)
        rec.slice_inv = feats.inv_features
        rec.target_per_volume = rec.label / rec.volume
        if feats.zero_area:
            rec.flags["zero_area"] = True
        out.append(rec)
    return out


def trainable(records: Iterable[SampleRecord]) -> list[SampleRecord]:
    """Records usable for slice-feature training (zero-area samples dropped)."""
    return [r for r in records if not r.flags.get("zero_area")]


def split(n: int, val_frac: float, test_frac: float = 0.0, seed: int = 0) -> dict[str, np.ndarray]:
    """Disjoint random train/val/test index sets covering range(n).

    The test set takes ``test_frac`` of all records; validation takes ``val_frac``
    of the remainder.
    """
    if not (0.0 <= val_frac < 1.0 and 0.0 <= test_frac < 1.0):
        raise ValueError("fractions must lie in [0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * (n - n_test)))
    parts = {
        "test": np.sort(perm[:n_test]),
        "val": np.sort(perm[n_test:n_test + n_val]),
        "train": np.sort(perm[n_test + n_val:]),
    }
    check_disjoint(parts, n)
    return parts


def check_disjoint(parts: dict[str, np.ndarray], n: int | None = None) -> None:
    seen = np.concatenate([np.asarray(v) for v in parts.values()]) if parts else np.zeros(0, dtype=int)
    if len(np.unique(seen)) != len(seen):
        raise ValueError("overlapping split assignment")
    if n is not None and len(seen) != n:
        raise ValueError("split does not cover every record")


# --- persistence --------------------------------------------------------------

def _stem(path: Path) -> Path:
    name = path.name
    for suffix in (".jsonl.gz", ".jsonl", ".gz"):
        if name.endswith(suffix):
            return path.with_name(name[: -len(suffix)])
    return path


def manifest_path(path: str | Path) -> Path:
    stem = _stem(Path(path))
    return stem.with_name(stem.name + ".manifest.json")


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def export(records: Iterable[SampleRecord], path: str | Path, manifest: Manifest | None = None) -> Path:
    """Write JSONL (gzip if the path ends with .gz) plus the manifest sidecar."""
    path = Path(path)
    buf = io.StringIO()
    buf.write(_dumps(HEADER) + "\n")
    for rec in records:
        buf.write(_dumps(rec.to_json()) + "\n")
    data = buf.getvalue().encode()
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
            gz.write(data)
    else:
        path.write_bytes(data)
    if manifest is not None:
        manifest_path(path).write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def iter_records(path: str | Path) -> Iterator[SampleRecord]:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"unreadable header: {exc}", 1) from exc
        if not isinstance(header, dict) or header.get("schema") != SCHEMA:
            raise SchemaMismatch(f"unsupported schema {header.get('schema') if isinstance(header, dict) else header!r}")
        lineno = 1
        while True:
            lineno += 1
            try:
                line = fh.readline()
            except (EOFError, OSError) as exc:
                raise CorruptRecord(f"line {lineno}: truncated stream ({exc})", lineno) from exc
            if not line:
                return
            if not line.strip():
                continue
            try:
                rec = SampleRecord.from_json(json.loads(line))
                rec.validate()
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptRecord(f"line {lineno}: {exc}", lineno) from exc
            yield rec


def load(path: str | Path) -> tuple[list[SampleRecord], Manifest | None]:
    records = list(iter_records(path))
    mp = manifest_path(path)
    man = Manifest.from_json(json.loads(mp.read_text())) if mp.exists() else None
    return records, man
