"""Random aperiodic lattices in a cube: 8 fixed corners + uniform interior joints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .delaunay import delaunay_3d, tets_to_edges
from .errors import DegenerateInput, GenerationFailed

# binary order, x fastest
CORNERS = np.array(
    [[x, y, z] for z in (0.0, 1.0) for y in (0.0, 1.0) for x in (0.0, 1.0)],
    dtype=float,
)
BOTTOM_CORNERS = (0, 1, 2, 3)
TOP_CORNERS = (4, 5, 6, 7)

MAX_SEED = 2**64


@dataclass(frozen=True)
class GenConfig:
    n_free: int
    epsilon: float = 0.05
    seed: int = 0
    domain_edge: float = 1.0

    def __post_init__(self):
        if self.n_free < 0:
            raise ValueError(f"n_free must be >= 0, got {self.n_free}")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if not 0 <= self.seed < MAX_SEED:
            raise ValueError("seed must be a non-negative 64-bit integer")
        if self.domain_edge <= 0:
            raise ValueError("domain_edge must be positive")


@dataclass(frozen=True)
class SectionSpec:
    """Solid circular strut section."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def I_bend(self) -> float:
        return math.pi * self.radius**4 / 4.0

    @property
    def J_torsion(self) -> float:
        return math.pi * self.radius**4 / 2.0


@dataclass(frozen=True)
class MaterialSpec:
    young_modulus: float
    poisson_ratio: float = 0.3

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ValueError("young_modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in [0, 0.5)")

    @property
    def shear_modulus(self) -> float:
        return self.young_modulus / (2.0 * (1.0 + self.poisson_ratio))


# 316L stainless steel bars, r = 5 mm
DEFAULT_SECTION = SectionSpec(radius=5e-3)
DEFAULT_MATERIAL = MaterialSpec(young_modulus=193e9, poisson_ratio=0.3)


@dataclass(eq=False)
class Lattice:
    nodes: np.ndarray
    edges: np.ndarray
    section: SectionSpec = DEFAULT_SECTION
    material: MaterialSpec = DEFAULT_MATERIAL
    domain_edge: float = 1.0
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_vectors(self) -> np.ndarray:
        return self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(), axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Lattice):
            return NotImplemented
        return (
            self.section == other.section
            and self.material == other.material
            and self.domain_edge == other.domain_edge
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.edges, other.edges)
        )


def derive_seed(*entropy: int) -> int:
    """Pure 64-bit seed derived from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(e) for e in entropy])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_nodes(config: GenConfig) -> np.ndarray:
    """Cube corners followed by ``n_free`` iid uniform interior joints."""
    if config.n_free < 0:
        raise ValueError("n_free must be >= 0")
    L = config.domain_edge
    rng = np.random.default_rng(config.seed)
    lo, hi = config.epsilon * L, (1.0 - config.epsilon) * L
    min_gap = 1e-6 * L
    pts = [c for c in CORNERS * L]
    while len(pts) < 8 + config.n_free:
        p = rng.uniform(lo, hi, size=3)
        if np.min(np.linalg.norm(np.asarray(pts) - p, axis=1)) < min_gap:
            continue
        pts.append(p)
    return np.asarray(pts, dtype=float)


def is_connected(n_nodes: int, edges: np.ndarray) -> bool:
    if n_nodes == 0:
        return True
    if len(edges) == 0:
        return n_nodes == 1
    adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n_nodes, n_nodes))
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def _attempt_seed(seed: int, attempt: int) -> int:
    return seed if attempt == 0 else derive_seed(seed, attempt)


def generate_lattice(
    config: GenConfig,
    section: SectionSpec = DEFAULT_SECTION,
    material: MaterialSpec = DEFAULT_MATERIAL,
    max_retries: int = 16,
) -> Lattice:
    """Sample joints and connect them with the Delaunay tetrahedralization.

    Degenerate draws are resampled from a seed derived from (seed, attempt), so
    the result is a pure function of ``config``.
    """
    L = config.domain_edge
    last = None
    for attempt in range(max_retries):
        cfg = GenConfig(config.n_free, config.epsilon, _attempt_seed(config.seed, attempt), L)
        nodes = sample_nodes(cfg)
        try:
            tets = delaunay_3d(nodes)
        except DegenerateInput as exc:
            last = exc
            continue
        vol = float(np.sum(_tet_volumes(nodes, tets)))
        if abs(vol - L**3) > 1e-9 * L**3:
            last = DegenerateInput(f"tets cover volume {vol}, expected {L**3}")
            continue
        edges = tets_to_edges(tets)
        if not is_connected(len(nodes), edges):
            last = DegenerateInput("disconnected lattice")
            continue
        return Lattice(nodes, edges, section, material, L, seed=config.seed)
    raise GenerationFailed(f"no valid lattice after {max_retries} attempts: {last}")


def _tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    a = nodes[tets[:, 0]]
    return np.abs(np.einsum("ij,ij->i", nodes[tets[:, 1]] - a,
                            np.cross(nodes[tets[:, 2]] - a, nodes[tets[:, 3]] - a))) / 6.0
