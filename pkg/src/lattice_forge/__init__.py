"""Random aperiodic lattices, direct-stiffness homogenization and learned surrogates."""

from .lattice import GenConfig, Lattice, MaterialSpec, SectionSpec, generate_lattice
from .mechanics import ModelKind, solve_lattice

__version__ = "0.1.0"

__all__ = [
    "GenConfig",
    "Lattice",
    "MaterialSpec",
    "ModelKind",
    "SectionSpec",
    "generate_lattice",
    "solve_lattice",
]
