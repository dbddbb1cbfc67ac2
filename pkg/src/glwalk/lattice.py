"""Periodic lattice geometry: the torus (Z/NZ)^d, its oriented bonds and shifts.

Bonds are oriented from a site ``x`` to ``x + e_k`` and enumerated site-major,
direction-minor, so in one dimension bond ``b`` is ``(b, b+1 mod N)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from glwalk.errors import GeometryError, UnsupportedDimensionError


@dataclass(frozen=True)
class Bond:
    """Oriented nearest-neighbour bond ``(origin, origin + e_direction)``."""

    origin: int
    direction: int = 0


@dataclass(frozen=True)
class Lattice:
    """The torus ``(Z/NZ)^d``.

    Instances are immutable and cheap to share between replicas.
    """

    N: int
    d: int = 1
    bonds: tuple[Bond, ...] = field(default=(), repr=False, compare=False)

    @property
    def n_sites(self) -> int:
        return self.N**self.d

    @property
    def n_bonds(self) -> int:
        return self.d * self.N**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def coords(self, site: int) -> tuple[int, ...]:
        self.check_site(site)
        return tuple(int(c) for c in np.unravel_index(site, self.shape))

    def site_index(self, coords) -> int:
        return int(np.ravel_multi_index(tuple(int(c) % self.N for c in coords), self.shape))

    def neighbor(self, site: int, direction: int, step: int = 1) -> int:
        """Site reached from ``site`` by ``step`` units along ``direction``."""
        c = list(self.coords(site))
        c[direction] = (c[direction] + step) % self.N
        return self.site_index(c)

    def endpoints(self, b: Bond) -> tuple[int, int]:
        return b.origin, self.neighbor(b.origin, b.direction)

    def bond_index(self, b: Bond) -> int:
        self.check_bond(b)
        return b.origin * self.d + b.direction

    def check_site(self, site: int) -> None:
        if not 0 <= int(site) < self.n_sites:
            raise GeometryError(f"site index {site} outside [0, {self.n_sites})")

    def check_bond(self, b: Bond) -> None:
        self.check_site(b.origin)
        if not 0 <= b.direction < self.d:
            raise GeometryError(f"bond direction {b.direction} outside [0, {self.d})")

    @cached_property
    def incidence(self) -> np.ndarray:
        """Bond-by-site matrix of the bond derivative: row ``b=(x,y)`` is ``e_y - e_x``."""
        D = np.zeros((self.n_bonds, self.n_sites))
        for k, b in enumerate(self.bonds):
            x, y = self.endpoints(b)
            D[k, x] -= 1.0
            D[k, y] += 1.0
        return D

    @cached_property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_sites, self.n_sites))
        for b in self.bonds:
            x, y = self.endpoints(b)
            A[x, y] += 1.0
            A[y, x] += 1.0
        return A


def make_torus(N: int, d: int = 1) -> Lattice:
    """Build the torus ``(Z/NZ)^d`` with its canonical bond list.

    Raises
    ------
    GeometryError
        If ``N < 3`` (neighbours would coincide) or ``d < 1``.
    """
    if int(N) != N or int(d) != d:
        raise GeometryError("N and d must be integers")
    N, d = int(N), int(d)
    if N < 3:
        raise GeometryError(f"torus side N={N} must be at least 3")
    if d < 1:
        raise GeometryError(f"dimension d={d} must be at least 1")
    bonds = tuple(Bond(x, k) for x in range(N**d) for k in range(d))
    return Lattice(N=N, d=d, bonds=bonds)


def shift(config, i: int):
    """Shift operator: output at site ``j`` is the input at ``i + j mod N``.

    Accepts a raw array (shifted along its last axis) or any dataclass with an
    ``eta`` attribute, e.g. :class:`glwalk.sampler.FieldConfig`.
    """
    if dataclasses.is_dataclass(config) and hasattr(config, "eta"):
        lattice = getattr(config, "lattice", None)
        if lattice is not None and lattice.d != 1:
            raise UnsupportedDimensionError("shift is implemented for d = 1 fields")
        n = np.shape(config.eta)[-1]
        if int(i) != i:
            raise GeometryError(f"shift {i} is not an integer")
        return dataclasses.replace(config, eta=np.roll(config.eta, -(int(i) % n), axis=-1))
    eta = np.asarray(config)
    if int(i) != i:
        raise GeometryError(f"shift {i} is not an integer")
    return np.roll(eta, -(int(i) % eta.shape[-1]), axis=-1)


def bond_neighbors(lattice: Lattice, b: Bond, k: int) -> Bond:
    """The bond ``b + k`` reached by a walk jump of length ``k``."""
    if lattice.d != 1:
        raise UnsupportedDimensionError("bond_neighbors is only defined for d = 1")
    lattice.check_bond(b)
    if k not in (-2, -1, 1, 2):
        raise GeometryError(f"offset {k} not in {{-2, -1, 1, 2}}")
    return Bond((b.origin + k) % lattice.N, 0)
