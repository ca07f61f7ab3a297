"""Direct stiffness method for truss and Euler-Bernoulli beam lattices.

Uniaxial test along z with imposed top displacement, static condensation of the
free DOFs, and the energy-equivalent Young's modulus

    E_z = (f_r . u_r) * L_z / (u*^2 * A_z).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, LinAlgError
from scipy.linalg import cholesky

from .errors import DimensionMismatch, SingularSystem
from .lattice import BOTTOM_CORNERS, TOP_CORNERS, Lattice


class ModelKind(str, enum.Enum):
    TRUSS = "truss"
    EULER_BERNOULLI = "beam"

    @property
    def dofs_per_node(self) -> int:
        return 3 if self is ModelKind.TRUSS else 6

    @classmethod
    def parse(cls, value: "ModelKind | str") -> "ModelKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if value in (kind.value, kind.name.lower(), kind.name):
                return kind
        raise ValueError(f"unknown model kind {value!r}")


@dataclass
class BoundaryConditions:
    """Prescribed DOF values; everything not listed is free."""

    restrained: dict[int, float]

    @property
    def indices(self) -> np.ndarray:
        return np.array(sorted(self.restrained), dtype=np.int64)

    @property
    def values(self) -> np.ndarray:
        return np.array([self.restrained[i] for i in sorted(self.restrained)], dtype=float)


@dataclass
class GlobalSystem:
    stiffness: np.ndarray
    kind: ModelKind
    n_nodes: int

    @property
    def n_dofs(self) -> int:
        return self.stiffness.shape[0]

    def dof(self, node: int, component: int) -> int:
        return node * self.kind.dofs_per_node + component


@dataclass
class SolveResult:
    u_free: np.ndarray
    f_reactions: np.ndarray
    free: np.ndarray
    restrained: np.ndarray
    u_restrained: np.ndarray
    work_ext: float = float("nan")
    e_eff: float = float("nan")
    volume: float = float("nan")
    extra: dict = field(default_factory=dict)

    def full_displacement(self) -> np.ndarray:
        u = np.zeros(len(self.free) + len(self.restrained))
        u[self.free] = self.u_free
        u[self.restrained] = self.u_restrained
        return u


def truss_local_stiffness(E: float, A: float, l: float) -> np.ndarray:
    if l <= 0:
        raise ValueError("element length must be positive")
    k = np.zeros((6, 6))
    k[0, 0] = k[3, 3] = 1.0
    k[0, 3] = k[3, 0] = -1.0
    return E * A / l * k


def beam_local_stiffness(E, G, A, I_y, I_z, J, l) -> np.ndarray:
    """12-DOF Euler-Bernoulli frame element, DOFs (u, v, w, rx, ry, rz) per node.

    ``l`` may be an array of lengths, giving a stack of matrices.
    """
    l = np.asarray(l, dtype=float)
    if np.any(l <= 0):
        raise ValueError("element length must be positive")
    k = np.zeros(l.shape + (12, 12))
    ea, gj = E * A / l, G * J / l
    k[..., 0, 0] = k[..., 6, 6] = ea
    k[..., 0, 6] = -ea
    k[..., 3, 3] = k[..., 9, 9] = gj
    k[..., 3, 9] = -gj
    # bending in the local x-y plane: v, rz
    a, b, c, d = 12 * E * I_z / l**3, 6 * E * I_z / l**2, 4 * E * I_z / l, 2 * E * I_z / l
    k[..., 1, 1] = k[..., 7, 7] = a
    k[..., 1, 7] = -a
    k[..., 1, 5] = k[..., 1, 11] = b
    k[..., 5, 7] = k[..., 7, 11] = -b
    k[..., 5, 5] = k[..., 11, 11] = c
    k[..., 5, 11] = d
    # bending in the local x-z plane: w, ry
    a, b, c, d = 12 * E * I_y / l**3, 6 * E * I_y / l**2, 4 * E * I_y / l, 2 * E * I_y / l
    k[..., 2, 2] = k[..., 8, 8] = a
    k[..., 2, 8] = -a
    k[..., 2, 4] = k[..., 2, 10] = -b
    k[..., 4, 8] = k[..., 8, 10] = b
    k[..., 4, 4] = k[..., 10, 10] = c
    k[..., 4, 10] = d
    upper = np.triu(np.ones((12, 12), dtype=bool), 1)
    k[..., upper.T] = np.swapaxes(k, -1, -2)[..., upper.T]
    return k


def local_axes(direction: np.ndarray) -> np.ndarray:
    """Rows are the local x, y, z axes in global coordinates, for (m, 3) directions."""
    ex = np.atleast_2d(np.asarray(direction, dtype=float))
    ey = np.cross(np.array([0.0, 0.0, 1.0]), ex)
    norm = np.linalg.norm(ey, axis=1)
    vertical = norm < 1e-8
    ey[vertical] = np.array([1.0, 0.0, 0.0])
    norm[vertical] = 1.0
    ey /= norm[:, None]
    ez = np.cross(ex, ey)
    return np.stack([ex, ey, ez], axis=1)


def _check_unit(direction: np.ndarray) -> None:
    norms = np.linalg.norm(np.atleast_2d(direction), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise ValueError("direction must be a unit vector")


def local_to_global(local: np.ndarray, direction) -> np.ndarray:
    """Rotate an element matrix from local to global axes: T^T K T."""
    direction = np.asarray(direction, dtype=float)
    _check_unit(direction)
    n = local.shape[0]
    R = local_axes(direction)[0]
    T = np.kron(np.eye(n // 3), R)
    return T.T @ local @ T


def _element_matrices(lattice: Lattice, kind: ModelKind) -> np.ndarray:
    vec = lattice.edge_vectors()
    length = np.linalg.norm(vec, axis=1)
    if np.any(length <= 0):
        raise DimensionMismatch("zero-length element")
    R = local_axes(vec / length[:, None])
    sec, mat = lattice.section, lattice.material
    if kind is ModelKind.TRUSS:
        base = truss_local_stiffness(1.0, 1.0, 1.0)
        scale = mat.young_modulus * sec.area / length
        n_blocks = 2
        k_loc = base[None, :, :] * scale[:, None, None]
    else:
        n_blocks = 4
        k_loc = beam_local_stiffness(mat.young_modulus, mat.shear_modulus, sec.area,
                                     sec.I_bend, sec.I_bend, sec.J_torsion, length)
    m = len(length)
    T = np.zeros((m, 3 * n_blocks, 3 * n_blocks))
    for b in range(n_blocks):
        T[:, 3 * b:3 * b + 3, 3 * b:3 * b + 3] = R
    return np.swapaxes(T, 1, 2) @ k_loc @ T


def element_dofs(lattice: Lattice, kind: ModelKind) -> np.ndarray:
    d = kind.dofs_per_node
    comp = np.arange(d)
    return np.concatenate([lattice.edges[:, [0]] * d + comp, lattice.edges[:, [1]] * d + comp], axis=1)


def assemble(lattice: Lattice, kind: ModelKind | str) -> GlobalSystem:
    kind = ModelKind.parse(kind)
    n = lattice.n_nodes
    if lattice.nodes.shape != (n, 3) or lattice.edges.ndim != 2 or lattice.edges.shape[1] != 2:
        raise DimensionMismatch("malformed lattice arrays")
    if len(lattice.edges) and (lattice.edges.min() < 0 or lattice.edges.max() >= n):
        raise DimensionMismatch("edge references a missing node")
    nd = n * kind.dofs_per_node
    K = np.zeros(nd * nd)
    if lattice.n_edges:
        ke = _element_matrices(lattice, kind)
        dofs = element_dofs(lattice, kind)
        flat = (dofs[:, :, None] * nd + dofs[:, None, :]).ravel()
        K = np.bincount(flat, weights=ke.ravel(), minlength=nd * nd)
    K = K.reshape(nd, nd)
    return GlobalSystem(0.5 * (K + K.T), kind, n)


def element_strain_energies(lattice: Lattice, kind: ModelKind, u: np.ndarray) -> np.ndarray:
    """u_e^T K_e u_e per element (twice the strain energy)."""
    ke = _element_matrices(lattice, kind)
    ue = u[element_dofs(lattice, kind)]
    return np.einsum("mi,mij,mj->m", ue, ke, ue)


def uniaxial_bcs(lattice: Lattice, kind: ModelKind | str, u_star: float) -> BoundaryConditions:
    """Corners: lateral u = 0; bottom u_z = 0; top u_z = u*; beam rotations clamped."""
    kind = ModelKind.parse(kind)
    d = kind.dofs_per_node
    restrained: dict[int, float] = {}
    for node in BOTTOM_CORNERS + TOP_CORNERS:
        restrained[node * d + 0] = 0.0
        restrained[node * d + 1] = 0.0
        restrained[node * d + 2] = float(u_star) if node in TOP_CORNERS else 0.0
        for r in range(3, d):
            restrained[node * d + r] = 0.0
    return BoundaryConditions(restrained)


def solve_condensed(system: GlobalSystem, bc: BoundaryConditions) -> SolveResult:
    K = system.stiffness
    nd = system.n_dofs
    r = bc.indices
    if len(r) and (r.min() < 0 or r.max() >= nd):
        raise DimensionMismatch("restrained DOF out of range")
    u_r = bc.values
    mask = np.ones(nd, dtype=bool)
    mask[r] = False
    f = np.flatnonzero(mask)
    K_rr = K[np.ix_(r, r)]
    if len(f) == 0:
        u_f = np.zeros(0)
        f_r = K_rr @ u_r
        return SolveResult(u_f, f_r, f, r, u_r)
    K_ff = K[np.ix_(f, f)]
    K_fr = K[np.ix_(f, r)]
    diag_max = float(np.max(np.abs(np.diag(K_ff)))) if len(f) else 0.0
    if diag_max == 0.0:
        raise SingularSystem("free block has zero diagonal")
    try:
        chol = cholesky(K_ff, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystem(f"K_ff not positive definite: {exc}") from exc
    pivots = np.diag(chol) ** 2
    if np.min(pivots) < 1e-12 * diag_max:
        raise SingularSystem(f"pivot {np.min(pivots):.3e} below threshold (mechanism)")
    rhs = K_fr @ u_r
    u_f = -cho_solve((chol, True), rhs, check_finite=False)
    residual = np.linalg.norm(K_ff @ u_f + rhs)
    if residual > 1e-8 * max(np.linalg.norm(rhs), 1e-300) and np.linalg.norm(rhs) > 0:
        raise SingularSystem(f"condensed solve residual {residual:.3e} too large")
    # (K_rr - K_rf K_ff^-1 K_fr) u_r
    f_r = K_rr @ u_r + K_fr.T @ u_f
    return SolveResult(u_f, f_r, f, r, u_r)


def external_work(result: SolveResult, bc: BoundaryConditions | None = None) -> float:
    u_r = result.u_restrained if bc is None else bc.values
    return float(np.dot(result.f_reactions, u_r))


def effective_modulus(work: float, u_star: float, L_z: float, A_z: float) -> float:
    if u_star == 0:
        raise ValueError("u_star must be nonzero")
    return work * L_z / (u_star**2 * A_z)


def lattice_volume(lattice: Lattice) -> float:
    if lattice.n_edges == 0:
        return 0.0
    return float(np.sum(lattice.section.area * lattice.edge_lengths()))


def solve_lattice(lattice: Lattice, kind: ModelKind | str, u_star: float | None = None) -> SolveResult:
    kind = ModelKind.parse(kind)
    L = lattice.domain_edge
    if u_star is None:
        u_star = 1e-3 * L
    if u_star == 0:
        raise ValueError("u_star must be nonzero")
    system = assemble(lattice, kind)
    bc = uniaxial_bcs(lattice, kind, u_star)
    result = solve_condensed(system, bc)
    result.work_ext = external_work(result, bc)
    result.e_eff = effective_modulus(result.work_ext, u_star, L, L * L)
    result.volume = lattice_volume(lattice)
    return result
