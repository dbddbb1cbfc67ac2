"""Conservative Ginzburg-Landau dynamics on the torus and the bond random walk
whose occupation times encode the canonical-ensemble correlations."""

from glwalk.lattice import Bond, Lattice, make_torus, shift, bond_neighbors
from glwalk.potential import (
    HamiltonianSpec,
    PotentialSpec,
    gaussian,
    gaussian_plus_logcosh,
    table_potential,
)
from glwalk.sampler import FieldConfig, RngStream

__version__ = "0.1.0"

__all__ = [
    "Bond",
    "Lattice",
    "make_torus",
    "shift",
    "bond_neighbors",
    "HamiltonianSpec",
    "PotentialSpec",
    "gaussian",
    "gaussian_plus_logcosh",
    "table_potential",
    "FieldConfig",
    "RngStream",
]
